//! Sliding-window, clustering-based diarization over oracle speech regions.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pairscore::{pair_features, ScoreModel};
use crate::spectral::{stft, StftConfig};
use crate::timeline::Timeline;
use crate::wpe::{estimate_wpe, WpeConfig, WpeFilter};
use crate::{Error, Result};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Stop merging at this many clusters.
    KnownCount(usize),
    /// Stop when the best average-linkage score drops below this value.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiarizeConfig {
    pub window: f64,
    pub shift: f64,
    pub cluster: ClusterMode,
    #[serde(default)]
    pub chunk_len: Option<f64>,
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        Self {
            window: 4.0,
            shift: 0.5,
            cluster: ClusterMode::Threshold(0.0),
            chunk_len: None,
        }
    }
}

impl DiarizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0 && self.shift > 0.0 && self.shift <= self.window) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < shift <= window, got window {} shift {}",
                self.window, self.shift
            )));
        }
        match self.cluster {
            ClusterMode::KnownCount(0) => {
                return Err(Error::InvalidConfig("speaker count must be >= 1".into()))
            }
            ClusterMode::Threshold(t) if t.is_nan() => {
                return Err(Error::InvalidConfig("threshold is NaN".into()))
            }
            _ => {}
        }
        if let Some(c) = self.chunk_len {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("chunk length must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Shortest window (seconds) that yields enough STFT frames for WPE.
pub fn min_window_seconds(stft: &StftConfig, wpe: &WpeConfig, sample_rate: u32) -> f64 {
    let samples = stft.n_fft + (wpe.min_frames() - 1) * stft.hop;
    samples as f64 / sample_rate as f64
}

/// Sliding windows inside each speech region.
///
/// A trailing remainder of at least half a window becomes its own window
/// ending at the region end; a shorter remainder extends the previous
/// window. Regions no longer than one window give a single window if they
/// reach `min_len`, otherwise they are skipped.
pub fn segment_windows(speech: &Timeline, cfg: &DiarizeConfig, min_len: f64) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if speech.is_empty() {
        return Err(Error::EmptyTimeline);
    }
    let mut out = Vec::new();
    for (start, end) in speech.speech_regions() {
        let len = end - start;
        if len <= cfg.window + TIME_EPS {
            if len + TIME_EPS >= min_len {
                out.push((start, end));
            } else {
                warn!(
                    "{}: skipping {:.3}s region at {:.3}s (shorter than {:.3}s)",
                    speech.recording_id, len, start, min_len
                );
            }
            continue;
        }
        let first = out.len();
        let mut t = start;
        while t + cfg.window <= end + TIME_EPS {
            out.push((t, (t + cfg.window).min(end)));
            t = start + (out.len() - first) as f64 * cfg.shift;
        }
        let last_end = out.last().map(|w| w.1).unwrap_or(start);
        if end - last_end > TIME_EPS {
            if end - t + TIME_EPS >= cfg.window / 2.0 {
                out.push((t, end));
            } else if let Some(last) = out.last_mut() {
                last.1 = end;
            }
        }
    }
    Ok(out)
}

/// Converts labelled, time-ordered windows into a timeline. Where two
/// consecutive windows overlap, the boundary sits at the overlap midpoint.
pub fn windows_to_timeline(recording_id: &str, windows: &[(f64, f64)], labels: &[String]) -> Timeline {
    let mut tl = Timeline::new(recording_id);
    for (i, (&(s, e), label)) in windows.iter().zip(labels).enumerate() {
        let start = match i.checked_sub(1).map(|p| windows[p]) {
            Some((_, pe)) if pe > s => (s + pe) / 2.0,
            _ => s,
        };
        let end = match windows.get(i + 1) {
            Some(&(ns, _)) if ns < e => (ns + e) / 2.0,
            _ => e,
        };
        if end > start {
            tl.push(label.clone(), start, end);
        }
    }
    tl.merged()
}

/// Dense symmetric score matrix; the diagonal holds `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
    /// Pairs whose features could not be estimated.
    pub failures: usize,
}

impl ScoreMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data, failures: 0 }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

pub fn score_matrix(filters: &[WpeFilter], model: &ScoreModel) -> Result<ScoreMatrix> {
    let n = filters.len();
    if n < 2 {
        return Err(Error::OutOfRange(format!("need at least 2 filters, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let scores: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pair_features(&filters[i], &filters[j], model).ok().map(|p| p.fused))
        .collect();
    let mut m = ScoreMatrix {
        n,
        data: vec![f64::INFINITY; n * n],
        failures: 0,
    };
    for (&(i, j), s) in pairs.iter().zip(scores) {
        let v = s.unwrap_or_else(|| {
            m.failures += 1;
            model.min_score
        });
        m.data[i * n + j] = v;
        m.data[j * n + i] = v;
    }
    if m.failures > 0 {
        warn!("{} of {} pairs could not be scored", m.failures, pairs.len());
    }
    Ok(m)
}

/// Average-linkage agglomerative clustering on similarities. Labels are
/// numbered by first appearance.
pub fn ahc_cluster(matrix: &ScoreMatrix, mode: ClusterMode) -> Vec<usize> {
    let n = matrix.len();
    if n == 0 {
        return Vec::new();
    }
    // Cluster `c` is identified by its smallest member; `sums[a][b]` is the
    // total pairwise score between clusters a and b.
    let mut sums: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { matrix.get(i, j) }).collect())
        .collect();
    let mut sizes = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut active: Vec<usize> = (0..n).collect();

    loop {
        if let ClusterMode::KnownCount(k) = mode {
            if active.len() <= k {
                break;
            }
        }
        if active.len() < 2 {
            break;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for (ia, &a) in active.iter().enumerate() {
            for &b in &active[ia + 1..] {
                let avg = sums[a][b] / (sizes[a] * sizes[b]) as f64;
                if best.is_none_or(|(_, _, s)| avg > s) {
                    best = Some((a, b, avg));
                }
            }
        }
        let (a, b, score) = best.expect("at least two clusters");
        if let ClusterMode::Threshold(t) = mode {
            if !(score >= t) {
                break;
            }
        }
        for &c in &active {
            if c != a && c != b {
                let v = sums[b][c];
                sums[a][c] += v;
                sums[c][a] += v;
            }
        }
        sizes[a] += sizes[b];
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        active.retain(|&c| c != b);
    }

    let mut relabel: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    owner
        .iter()
        .map(|&o| {
            *relabel[o].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Everything produced by one diarization pass.
#[derive(Debug, Clone)]
pub struct Diarization {
    pub timeline: Timeline,
    pub windows: Vec<(f64, f64)>,
    pub labels: Vec<String>,
    pub failed_pairs: usize,
}

pub fn extract_filters(
    audio: &[f64],
    sample_rate: u32,
    windows: &[(f64, f64)],
    stft_cfg: StftConfig,
    wpe_cfg: &WpeConfig,
) -> Result<Vec<WpeFilter>> {
    windows
        .par_iter()
        .map(|&(s, e)| {
            let a = ((s * sample_rate as f64).round() as usize).min(audio.len());
            let b = ((e * sample_rate as f64).round() as usize).min(audio.len());
            let spec = stft(&audio[a..b], stft_cfg, sample_rate)?;
            Ok(estimate_wpe(&spec, wpe_cfg)?.filter)
        })
        .collect()
}

fn diarize_span(
    recording_id: &str,
    audio: &[f64],
    sample_rate: u32,
    speech: &Timeline,
    cfg: &DiarizeConfig,
    wpe_cfg: &WpeConfig,
    model: &ScoreModel,
) -> Result<Diarization> {
    let empty = || Diarization {
        timeline: Timeline::new(recording_id),
        windows: Vec::new(),
        labels: Vec::new(),
        failed_pairs: 0,
    };
    if speech.is_empty() {
        return Ok(empty());
    }
    let min_len = min_window_seconds(&model.stft, wpe_cfg, sample_rate);
    let windows = segment_windows(speech, cfg, min_len)?;
    if windows.is_empty() {
        warn!("{recording_id}: no usable windows");
        return Ok(empty());
    }
    let filters = extract_filters(audio, sample_rate, &windows, model.stft, wpe_cfg)?;
    let (ids, failed_pairs) = if filters.len() == 1 {
        (vec![0], 0)
    } else {
        let m = score_matrix(&filters, model)?;
        (ahc_cluster(&m, cfg.cluster), m.failures)
    };
    let labels: Vec<String> = ids.iter().map(|i| format!("spk{}", i + 1)).collect();
    Ok(Diarization {
        timeline: windows_to_timeline(recording_id, &windows, &labels),
        windows,
        labels,
        failed_pairs,
    })
}

/// Full pipeline; with `chunk_len` set, equal-length chunks are diarized
/// independently and their labels prefixed `c<index>_`.
pub fn diarize_detailed(
    audio: &[f64],
    sample_rate: u32,
    speech: &Timeline,
    cfg: &DiarizeConfig,
    wpe_cfg: &WpeConfig,
    model: &ScoreModel,
) -> Result<Diarization> {
    cfg.validate()?;
    wpe_cfg.validate()?;
    let rec = speech.recording_id.as_str();
    let duration = audio.len() as f64 / sample_rate as f64;
    let n_chunks = match cfg.chunk_len {
        Some(c) => ((duration / c) - TIME_EPS).ceil().max(1.0) as usize,
        None => 1,
    };
    if n_chunks == 1 {
        return diarize_span(rec, audio, sample_rate, speech, cfg, wpe_cfg, model);
    }
    let chunk_len = cfg.chunk_len.expect("chunked");
    let mut out = Diarization {
        timeline: Timeline::new(rec),
        windows: Vec::new(),
        labels: Vec::new(),
        failed_pairs: 0,
    };
    for c in 0..n_chunks {
        let start = c as f64 * chunk_len;
        let part = speech.clip(start, start + chunk_len, false);
        let d = diarize_span(rec, audio, sample_rate, &part, cfg, wpe_cfg, model)?;
        let prefix = |l: &str| format!("c{c}_{l}");
        for mut s in d.timeline.entries {
            s.label = prefix(&s.label);
            out.timeline.entries.push(s);
        }
        out.windows.extend(d.windows);
        out.labels.extend(d.labels.iter().map(|l| prefix(l)));
        out.failed_pairs += d.failed_pairs;
    }
    Ok(out)
}

pub fn diarize(
    audio: &[f64],
    sample_rate: u32,
    speech: &Timeline,
    cfg: &DiarizeConfig,
    wpe_cfg: &WpeConfig,
    model: &ScoreModel,
) -> Result<Timeline> {
    diarize_detailed(audio, sample_rate, speech, cfg, wpe_cfg, model).map(|d| d.timeline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn speech(regions: &[(f64, f64)]) -> Timeline {
        let mut t = Timeline::new("r");
        for (a, b) in regions {
            t.push("S", *a, *b);
        }
        t
    }

    fn cfg(window: f64, shift: f64) -> DiarizeConfig {
        DiarizeConfig {
            window,
            shift,
            ..Default::default()
        }
    }

    #[test]
    fn windows_examples() {
        let w = segment_windows(&speech(&[(0.0, 4.0)]), &cfg(4.0, 0.5), 0.1).unwrap();
        assert_eq!(w, vec![(0.0, 4.0)]);

        let w = segment_windows(&speech(&[(0.0, 5.0)]), &cfg(4.0, 0.5), 0.1).unwrap();
        let starts: Vec<f64> = w.iter().map(|x| x.0).collect();
        assert_eq!(starts, vec![0.0, 0.5, 1.0]);
        assert_abs_diff_eq!(w[2].1, 5.0);

        let w = segment_windows(&speech(&[(0.0, 1.0)]), &cfg(4.0, 0.5), 0.1).unwrap();
        assert_eq!(w, vec![(0.0, 1.0)]);
        let w = segment_windows(&speech(&[(0.0, 0.05)]), &cfg(4.0, 0.5), 0.1).unwrap();
        assert!(w.is_empty());
        assert!(matches!(
            segment_windows(&Timeline::new("r"), &cfg(4.0, 0.5), 0.1),
            Err(Error::EmptyTimeline)
        ));
    }

    #[test]
    fn trailing_rules() {
        // Remainder 1.5 s after windows at 0 and 2 (shift 2): kept as its own
        // window [4, 5.5] since 1.5 >= 1.5 (= window/2).
        let w = segment_windows(&speech(&[(0.0, 5.5)]), &cfg(3.0, 2.0), 0.1).unwrap();
        assert_eq!(w, vec![(0.0, 3.0), (2.0, 5.0), (4.0, 5.5)]);
        // Remainder 0.5 s is merged into the previous window.
        let w = segment_windows(&speech(&[(0.0, 5.5)]), &cfg(3.0, 2.5), 0.1).unwrap();
        assert_eq!(w, vec![(0.0, 3.0), (2.5, 5.5)]);
        let w = segment_windows(&speech(&[(0.0, 6.6)]), &cfg(3.0, 3.0), 0.1).unwrap();
        assert_eq!(w, vec![(0.0, 3.0), (3.0, 6.6)]);
    }

    #[test]
    fn windows_cover_regions() {
        let sp = speech(&[(0.3, 7.9), (9.0, 9.8), (11.0, 20.05)]);
        let w = segment_windows(&sp, &cfg(4.0, 0.5), 0.1).unwrap();
        let labels = vec!["a".to_string(); w.len()];
        let tl = windows_to_timeline("r", &w, &labels);
        assert_eq!(tl.speech_regions(), sp.speech_regions());
    }

    #[test]
    fn midpoint_resolution() {
        let windows = [(0.0, 4.0), (0.5, 4.5), (1.0, 5.0)];
        let labels = ["a", "b", "b"].map(String::from);
        let tl = windows_to_timeline("r", &windows, &labels);
        assert_eq!(tl.entries.len(), 2);
        assert_abs_diff_eq!(tl.entries[0].end, 2.25);
        assert_abs_diff_eq!(tl.entries[1].start, 2.25);
        assert_abs_diff_eq!(tl.entries[1].end, 5.0);
    }

    fn block_matrix() -> ScoreMatrix {
        let group = [0, 1, 0, 1, 1, 0];
        ScoreMatrix::from_fn(6, |i, j| if group[i] == group[j] { 5.0 } else { -5.0 })
    }

    #[test]
    fn blocks_recovered() {
        let m = block_matrix();
        let expected = vec![0, 1, 0, 1, 1, 0];
        assert_eq!(ahc_cluster(&m, ClusterMode::KnownCount(2)), expected);
        assert_eq!(ahc_cluster(&m, ClusterMode::Threshold(0.0)), expected);
        assert_eq!(ahc_cluster(&m, ClusterMode::Threshold(f64::INFINITY)), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(ahc_cluster(&m, ClusterMode::Threshold(f64::NEG_INFINITY)), vec![0; 6]);
        assert_eq!(ahc_cluster(&m, ClusterMode::KnownCount(10)), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(ahc_cluster(&m, ClusterMode::KnownCount(1)), vec![0; 6]);
    }

    #[test]
    fn hand_traced_average_linkage() {
        // s(0,1)=4, s(0,2)=1, s(0,3)=-2, s(1,2)=2, s(1,3)=0, s(2,3)=3
        // step 1: merge {0,1} (4)
        // averages: {01}-2 = (1+2)/2 = 1.5, {01}-3 = (-2+0)/2 = -1, 2-3 = 3
        // step 2: merge {2,3} (3)
        // step 3: {01}-{23} = (1+2-2+0)/4 = 0.25
        let vals = [[0.0, 4.0, 1.0, -2.0], [4.0, 0.0, 2.0, 0.0], [1.0, 2.0, 0.0, 3.0], [-2.0, 0.0, 3.0, 0.0]];
        let m = ScoreMatrix::from_fn(4, |i, j| vals[i][j]);
        assert_eq!(ahc_cluster(&m, ClusterMode::KnownCount(3)), vec![0, 0, 1, 2]);
        assert_eq!(ahc_cluster(&m, ClusterMode::KnownCount(2)), vec![0, 0, 1, 1]);
        assert_eq!(ahc_cluster(&m, ClusterMode::Threshold(0.2)), vec![0, 0, 0, 0]);
        assert_eq!(ahc_cluster(&m, ClusterMode::Threshold(0.3)), vec![0, 0, 1, 1]);
    }

    #[test]
    fn tie_break_lowest_pair() {
        let m = ScoreMatrix::from_fn(3, |_, _| 1.0);
        assert_eq!(ahc_cluster(&m, ClusterMode::KnownCount(2)), vec![0, 0, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn permutation_consistent(vals in prop::collection::vec(-10.0f64..10.0, 28), seed in 0u64..1000, k in 1usize..5) {
                let n = 8;
                let mut idx = 0;
                let mut upper = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in i + 1..n {
                        upper[i][j] = vals[idx];
                        upper[j][i] = vals[idx];
                        idx += 1;
                    }
                }
                let m = ScoreMatrix::from_fn(n, |i, j| upper[i][j]);
                let mut perm: Vec<usize> = (0..n).collect();
                use rand::{seq::SliceRandom, SeedableRng};
                perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let pm = ScoreMatrix::from_fn(n, |i, j| upper[perm[i]][perm[j]]);
                for mode in [ClusterMode::KnownCount(k), ClusterMode::Threshold(0.0)] {
                    let a = ahc_cluster(&m, mode);
                    let b = ahc_cluster(&pm, mode);
                    for i in 0..n {
                        for j in 0..n {
                            prop_assert_eq!(a[perm[i]] == a[perm[j]], b[i] == b[j]);
                        }
                    }
                }
            }
        }
    }
}
