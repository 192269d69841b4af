//! Diarization error rate with optimal speaker mapping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::AddAssign;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diarizer::windows_to_timeline;
use crate::timeline::Timeline;
use crate::{Error, Result};

/// Scoring grid: 0.1 ms.
const TICKS_PER_SECOND: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerBreakdown {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_speech: f64,
    pub der: f64,
}

impl DerBreakdown {
    fn from_ticks(miss: i64, fa: i64, conf: i64, total: i64) -> Self {
        let s = |t: i64| t as f64 / TICKS_PER_SECOND;
        let mut out = Self {
            miss: s(miss),
            false_alarm: s(fa),
            confusion: s(conf),
            total_speech: s(total),
            der: 0.0,
        };
        out.der = out.error() / out.total_speech;
        out
    }

    pub fn error(&self) -> f64 {
        self.miss + self.false_alarm + self.confusion
    }
}

impl AddAssign for DerBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        self.miss += rhs.miss;
        self.false_alarm += rhs.false_alarm;
        self.confusion += rhs.confusion;
        self.total_speech += rhs.total_speech;
        self.der = if self.total_speech > 0.0 {
            self.error() / self.total_speech
        } else {
            0.0
        };
    }
}

fn to_ticks(t: f64) -> i64 {
    (t * TICKS_PER_SECOND).round() as i64
}

/// Per-label sets of active tick intervals, labels indexed in sorted order.
fn index_labels(tl: &Timeline) -> (Vec<String>, Vec<(usize, i64, i64)>) {
    let labels = tl.labels();
    let idx: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let spans = tl
        .entries
        .iter()
        .map(|s| (idx[s.label.as_str()], to_ticks(s.start), to_ticks(s.end)))
        .filter(|(_, a, b)| b > a)
        .collect();
    (labels, spans)
}

/// Elementary intervals between consecutive boundaries, each with the
/// multiset of active labels per side.
fn elementary(
    boundaries: &[i64],
    spans: &[(usize, i64, i64)],
    n_labels: usize,
) -> Vec<Vec<u32>> {
    // Difference arrays over boundary indices.
    let pos = |t: i64| boundaries.binary_search(&t).expect("boundary");
    let mut delta = vec![vec![0i32; n_labels]; boundaries.len()];
    for &(l, a, b) in spans {
        delta[pos(a)][l] += 1;
        delta[pos(b)][l] -= 1;
    }
    let mut active = vec![0i32; n_labels];
    let mut out = Vec::with_capacity(boundaries.len().saturating_sub(1));
    for d in delta.iter().take(boundaries.len().saturating_sub(1)) {
        for (a, x) in active.iter_mut().zip(d) {
            *a += x;
        }
        out.push(active.iter().map(|&a| a.max(0) as u32).collect());
    }
    out
}

/// Maximum-weight perfect matching on a square matrix (Hungarian method
/// with potentials, run on negated weights). Returns `assign[row] = col`.
fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Zero-collar DER with overlap scored, using the one-to-one speaker mapping
/// that maximises matched time.
pub fn der(reference: &Timeline, hypothesis: &Timeline) -> Result<DerBreakdown> {
    if reference.recording_id != hypothesis.recording_id {
        return Err(Error::RecordingMismatch(
            reference.recording_id.clone(),
            hypothesis.recording_id.clone(),
        ));
    }
    let (ref_labels, ref_spans) = index_labels(reference);
    let (hyp_labels, hyp_spans) = index_labels(hypothesis);
    if ref_spans.is_empty() {
        return Err(Error::NothingToScore);
    }
    let mut boundaries: Vec<i64> = ref_spans
        .iter()
        .chain(&hyp_spans)
        .flat_map(|&(_, a, b)| [a, b])
        .collect();
    boundaries.sort_unstable();
    boundaries.dedup();

    let ref_active = elementary(&boundaries, &ref_spans, ref_labels.len());
    let hyp_active = elementary(&boundaries, &hyp_spans, hyp_labels.len());

    let (nr, nh) = (ref_labels.len(), hyp_labels.len());
    let mut overlap = vec![vec![0i64; nh]; nr];
    for (i, w) in boundaries.windows(2).enumerate() {
        let dur = w[1] - w[0];
        for (r, &ra) in ref_active[i].iter().enumerate() {
            if ra == 0 {
                continue;
            }
            for (h, &ha) in hyp_active[i].iter().enumerate() {
                if ha > 0 {
                    overlap[r][h] += dur * ra.min(ha) as i64;
                }
            }
        }
    }

    // mapping[h] = Some(r)
    let mut mapping: Vec<Option<usize>> = vec![None; nh];
    if nh > 0 {
        let n = nr.max(nh);
        let mut weights = vec![vec![0i64; n]; n];
        for r in 0..nr {
            for h in 0..nh {
                weights[h][r] = overlap[r][h];
            }
        }
        let assign = max_weight_assignment(&weights);
        for (h, m) in mapping.iter_mut().enumerate() {
            let r = assign[h];
            if r < nr && overlap[r][h] > 0 {
                *m = Some(r);
            }
        }
    }

    let (mut miss, mut fa, mut conf, mut total) = (0i64, 0i64, 0i64, 0i64);
    for (i, w) in boundaries.windows(2).enumerate() {
        let dur = w[1] - w[0];
        let n_ref: i64 = ref_active[i].iter().map(|&a| a as i64).sum();
        let n_hyp: i64 = hyp_active[i].iter().map(|&a| a as i64).sum();
        let correct: i64 = hyp_active[i]
            .iter()
            .enumerate()
            .filter_map(|(h, &ha)| {
                let r = mapping[h]?;
                Some(ha.min(ref_active[i][r]) as i64)
            })
            .sum();
        total += n_ref * dur;
        miss += (n_ref - n_hyp).max(0) * dur;
        fa += (n_hyp - n_ref).max(0) * dur;
        conf += (n_ref.min(n_hyp) - correct) * dur;
    }
    Ok(DerBreakdown::from_ticks(miss, fa, conf, total))
}

/// DER accumulated over independent chunks of `chunk_len` seconds, each with
/// its own speaker mapping. Chunks without reference speech are skipped.
pub fn der_chunked(reference: &Timeline, hypothesis: &Timeline, chunk_len: f64) -> Result<DerBreakdown> {
    if !(chunk_len > 0.0) {
        return Err(Error::InvalidConfig("chunk length must be positive".into()));
    }
    let end = reference.end_time().max(hypothesis.end_time());
    let mut total = DerBreakdown::default();
    let mut any = false;
    let mut start = 0.0;
    while start < end {
        let stop = start + chunk_len;
        let r = reference.clip(start, stop, false);
        if !r.is_empty() {
            total += der(&r, &hypothesis.clip(start, stop, false))?;
            any = true;
        }
        start = stop;
    }
    if !any {
        return Err(Error::NothingToScore);
    }
    Ok(total)
}

/// Uniformly random window labels in `1..=n_spk`, turned into a timeline by
/// the same overlap-midpoint rule as the diarizer.
pub fn random_baseline(
    recording_id: &str,
    windows: &[(f64, f64)],
    n_spk: usize,
    seed: u64,
) -> Result<Timeline> {
    if n_spk == 0 {
        return Err(Error::InvalidConfig("n_spk must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = windows
        .iter()
        .map(|_| format!("spk{}", rng.gen_range(1..=n_spk)))
        .collect();
    Ok(windows_to_timeline(recording_id, windows, &labels))
}

pub fn der_csv(rows: &[(String, DerBreakdown)]) -> String {
    let mut out = String::from("recording_id,miss,fa,confusion,total_speech,der\n");
    for (id, b) in rows {
        let _ = writeln!(
            out,
            "{id},{:.4},{:.4},{:.4},{:.4},{:.6}",
            b.miss, b.false_alarm, b.confusion, b.total_speech, b.der
        );
    }
    out
}

pub fn write_der_csv(path: &Path, rows: &[(String, DerBreakdown)]) -> Result<()> {
    fs::write(path, der_csv(rows)).map_err(|e| Error::io(path, e))
}
