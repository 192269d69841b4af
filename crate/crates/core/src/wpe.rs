//! Single-channel weighted prediction error (WPE) dereverberation.
//!
//! Each frequency bin is an independent autoregressive problem: the
//! observation `X(n, f)` is predicted from `K` past frames starting `D` frames
//! back, and the prediction coefficients `g(f)` are refined by alternating a
//! variance estimate `λ(n, f)` of the desired signal with a `λ`-weighted
//! least-squares solve.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::solve_complex;
use crate::spectral::{mean_power, PowerProfile, Spectrogram, StftConfig};
use crate::{Error, Result};

/// Relative diagonal loading added to the normal equations.
const DIAGONAL_LOADING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpeConfig {
    pub taps: usize,
    pub delay: usize,
    pub iterations: usize,
    /// λ floor, relative to each bin's peak power.
    pub power_floor: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 3,
            iterations: 3,
            power_floor: 1e-6,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "WPE taps, delay and iterations must all be >= 1".into(),
            ));
        }
        if !(self.power_floor > 0.0) || !self.power_floor.is_finite() {
            return Err(Error::InvalidConfig(
                "WPE power floor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Smallest frame count `estimate_wpe` accepts.
    pub fn min_frames(&self) -> usize {
        self.delay + self.taps + 1
    }
}

/// Prediction filter matrix `G` (taps × bins) for one segment, plus the
/// segment's mean power profile for later joint-energy weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct WpeFilter {
    coeffs: Vec<Complex64>,
    pub config: WpeConfig,
    pub stft: StftConfig,
    pub power: PowerProfile,
}

impl WpeFilter {
    pub fn new(
        coeffs: Vec<Complex64>,
        config: WpeConfig,
        stft: StftConfig,
        power: PowerProfile,
    ) -> Result<Self> {
        let n_bins = stft.n_bins();
        if coeffs.len() != config.taps * n_bins || power.len() != n_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients and {} power bins for {} taps × {} bins",
                coeffs.len(),
                power.len(),
                config.taps,
                n_bins
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::OutOfRange("non-finite filter coefficient".into()));
        }
        Ok(Self {
            coeffs,
            config,
            stft,
            power,
        })
    }

    pub fn taps(&self) -> usize {
        self.config.taps
    }

    pub fn n_bins(&self) -> usize {
        self.stft.n_bins()
    }

    #[inline]
    pub fn get(&self, tap: usize, bin: usize) -> Complex64 {
        self.coeffs[tap * self.n_bins() + bin]
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct DereverbResult {
    pub filter: WpeFilter,
    /// Dereverberated estimate of the direct path and early reflections.
    pub residual: Spectrogram,
}

/// Weighted residual power of one iteration, measured with that iteration's
/// λ before and after the solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationFit {
    pub before: f64,
    pub after: f64,
}

struct BinFit {
    g: Vec<Complex64>,
    residual: Vec<Complex64>,
    trace: Vec<IterationFit>,
}

#[inline]
fn tap_value(x: &[Complex64], n: usize, lag: usize) -> Complex64 {
    if n >= lag {
        x[n - lag]
    } else {
        Complex64::new(0.0, 0.0)
    }
}

fn predict(x: &[Complex64], g: &[Complex64], n: usize, delay: usize) -> Complex64 {
    g.iter()
        .enumerate()
        .map(|(k, gk)| gk.conj() * tap_value(x, n, delay + k))
        .sum()
}

fn weighted_residual(x: &[Complex64], g: &[Complex64], lambda: &[f64], delay: usize) -> f64 {
    (0..x.len())
        .map(|n| (x[n] - predict(x, g, n, delay)).norm_sqr() / lambda[n])
        .sum()
}

fn fit_bin(x: &[Complex64], cfg: &WpeConfig, trace: bool) -> BinFit {
    let n_frames = x.len();
    let k = cfg.taps;
    let zero = Complex64::new(0.0, 0.0);
    let peak = x.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    let mut g = vec![zero; k];
    let mut residual = x.to_vec();
    let mut fits = Vec::new();
    if peak == 0.0 {
        return BinFit {
            g,
            residual,
            trace: fits,
        };
    }
    let floor = cfg.power_floor * peak;
    let mut lambda = vec![0.0; n_frames];
    let mut r_mat = vec![zero; k * k];
    let mut r_vec = vec![zero; k];
    let mut taps = vec![zero; k];

    for _ in 0..cfg.iterations {
        for (l, e) in lambda.iter_mut().zip(&residual) {
            *l = e.norm_sqr().max(floor);
        }
        let before = trace.then(|| weighted_residual(x, &g, &lambda, cfg.delay));

        r_mat.iter_mut().for_each(|v| *v = zero);
        r_vec.iter_mut().for_each(|v| *v = zero);
        for n in 0..n_frames {
            let inv = 1.0 / lambda[n];
            for (i, t) in taps.iter_mut().enumerate() {
                *t = tap_value(x, n, cfg.delay + i);
            }
            let target = x[n].conj() * inv;
            for i in 0..k {
                let ti = taps[i];
                if ti == zero {
                    continue;
                }
                let ti_w = ti * inv;
                for j in 0..k {
                    r_mat[i * k + j] += ti_w * taps[j].conj();
                }
                r_vec[i] += ti * target;
            }
        }
        let trace_r: f64 = (0..k).map(|i| r_mat[i * k + i].re).sum();
        if trace_r > 0.0 {
            let load = DIAGONAL_LOADING * trace_r / k as f64;
            for i in 0..k {
                r_mat[i * k + i] += load;
            }
            let mut a = r_mat.clone();
            let mut b = r_vec.clone();
            if solve_complex(&mut a, &mut b).is_some() {
                g = b;
            }
        }
        for n in 0..n_frames {
            residual[n] = x[n] - predict(x, &g, n, cfg.delay);
        }
        if let Some(before) = before {
            fits.push(IterationFit {
                before,
                after: weighted_residual(x, &g, &lambda, cfg.delay),
            });
        }
    }
    BinFit {
        g,
        residual,
        trace: fits,
    }
}

fn run(spec: &Spectrogram, cfg: &WpeConfig, trace: bool) -> Result<(DereverbResult, Vec<Vec<IterationFit>>)> {
    cfg.validate()?;
    let n_frames = spec.n_frames();
    if n_frames <= cfg.delay + cfg.taps {
        return Err(Error::SegmentTooShortForWpe {
            frames: n_frames,
            needed: cfg.delay + cfg.taps,
        });
    }
    let n_bins = spec.n_bins();
    let fits: Vec<BinFit> = (0..n_bins)
        .into_par_iter()
        .map(|f| {
            let column: Vec<Complex64> = (0..n_frames).map(|n| spec.get(n, f)).collect();
            fit_bin(&column, cfg, trace)
        })
        .collect();

    let mut coeffs = vec![Complex64::new(0.0, 0.0); cfg.taps * n_bins];
    let mut residual = spec.clone();
    for (f, fit) in fits.iter().enumerate() {
        for (k, g) in fit.g.iter().enumerate() {
            coeffs[k * n_bins + f] = *g;
        }
        for (n, e) in fit.residual.iter().enumerate() {
            residual.set(n, f, *e);
        }
    }
    let filter = WpeFilter::new(coeffs, *cfg, spec.config(), mean_power(spec))?;
    let traces = fits.into_iter().map(|f| f.trace).collect();
    Ok((DereverbResult { filter, residual }, traces))
}

/// Estimates the per-bin prediction filters and the dereverberated residual.
pub fn estimate_wpe(spec: &Spectrogram, cfg: &WpeConfig) -> Result<DereverbResult> {
    run(spec, cfg, false).map(|(r, _)| r)
}

/// Like [`estimate_wpe`], also returning the per-bin, per-iteration fit.
pub fn estimate_wpe_traced(
    spec: &Spectrogram,
    cfg: &WpeConfig,
) -> Result<(DereverbResult, Vec<Vec<IterationFit>>)> {
    run(spec, cfg, true)
}

/// Subtracts the filter's late-tail prediction from `spec`.
pub fn apply_wpe(spec: &Spectrogram, filter: &WpeFilter) -> Result<Spectrogram> {
    if spec.n_bins() != filter.n_bins() {
        return Err(Error::BinMismatch {
            left: spec.n_bins(),
            right: filter.n_bins(),
        });
    }
    let delay = filter.config.delay;
    let mut out = spec.clone();
    for f in 0..spec.n_bins() {
        let column: Vec<Complex64> = (0..spec.n_frames()).map(|n| spec.get(n, f)).collect();
        let g: Vec<Complex64> = (0..filter.taps()).map(|k| filter.get(k, f)).collect();
        for n in 0..spec.n_frames() {
            out.set(n, f, column[n] - predict(&column, &g, n, delay));
        }
    }
    Ok(out)
}
