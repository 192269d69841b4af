use num_complex::Complex64;

/// Solves `a · x = b` in place by Gaussian elimination with partial
/// pivoting. `a` is row-major `n × n`. Returns `None` when a pivot vanishes.
pub(crate) fn solve_complex(a: &mut [Complex64], b: &mut [Complex64]) -> Option<()> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))
            .unwrap();
        if a[pivot * n + col].norm() == 0.0 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let inv = a[col * n + col].inv();
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= factor * v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    Some(())
}

/// Solves a real 2×2 system; `None` if singular.
pub(crate) fn solve2(m: [[f64; 2]; 2], v: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        (m[1][1] * v[0] - m[0][1] * v[1]) / det,
        (m[0][0] * v[1] - m[1][0] * v[0]) / det,
    ])
}
