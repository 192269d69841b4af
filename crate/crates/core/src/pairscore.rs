//! Same-vs-different location scoring of two WPE filter sets.
//!
//! Two estimates are taken from a filter pair: the magnitude ratio `α̂`
//! (joint-energy weighted mean of `|G1|/|G2|`) and the circular delay `d̂`
//! (argmax of the weighted, magnitude-normalised cross term, a GCC-PHAT
//! style search). Each is converted to a log likelihood ratio under a
//! zero-mean Gaussian (`log α̂`) and a discretised von Mises (`d̂`) same
//! model against a wider Gaussian and a uniform different model, and the
//! two LLRs are fused by two-class LDA.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::linalg::solve2;
use crate::spectral::{joint_energy_weights, StftConfig, WeightVector};
use crate::wpe::{WpeConfig, WpeFilter};
use crate::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const KAPPA_MAX: f64 = 500.0;
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Bins with `|G2|` below this fraction of the filter's peak are skipped in
/// the magnitude ratio.
const DENOMINATOR_GUARD: f64 = 1e-12;

/// How the weighted ratio average is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaNorm {
    /// Weights renormalised per tap, so identical filters give exactly 1.
    #[default]
    Normalized,
    /// Plain `1/(K·F) · Σ ε_f · ratio`.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeatures {
    pub log_alpha: f64,
    pub delay_bin: usize,
    pub llr_mag: f64,
    pub llr_delay: f64,
    pub fused: f64,
}

/// Trained scoring parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub sigma2_same: f64,
    pub sigma2_diff: f64,
    pub kappa_same: f64,
    pub lda_w: [f64; 2],
    pub lda_b: f64,
    pub delay_bins: usize,
    #[serde(default)]
    pub alpha_norm: AlphaNorm,
    /// Lowest fused score seen in training; stands in for pairs that cannot
    /// be scored.
    pub min_score: f64,
    pub wpe: WpeConfig,
    pub stft: StftConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    schema_version: u32,
    #[serde(flatten)]
    model: ScoreModel,
}

impl ScoreModel {
    /// An untrained model: fixed LLR parameters, identity fusion.
    pub fn with_params(
        sigma2_same: f64,
        sigma2_diff: f64,
        kappa_same: f64,
        delay_bins: usize,
    ) -> Self {
        Self {
            sigma2_same,
            sigma2_diff,
            kappa_same,
            lda_w: [1.0, 1.0],
            lda_b: 0.0,
            delay_bins,
            alpha_norm: AlphaNorm::Normalized,
            min_score: 0.0,
            wpe: WpeConfig::default(),
            stft: StftConfig {
                n_fft: delay_bins,
                ..StftConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma2_same > 0.0
            && self.sigma2_diff > 0.0
            && self.sigma2_same.is_finite()
            && self.sigma2_diff.is_finite()
            && (0.0..=KAPPA_MAX).contains(&self.kappa_same)
            && self.delay_bins >= 1
            && self.lda_w.iter().all(|w| w.is_finite())
            && self.lda_b.is_finite()
            && self.min_score.is_finite();
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid score model {self:?}")));
        }
        self.wpe.validate()?;
        self.stft.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion(doc.schema_version));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn check_comparable(g1: &WpeFilter, g2: &WpeFilter, eps: &WeightVector) -> Result<()> {
    if g1.n_bins() != g2.n_bins() || eps.0.len() != g1.n_bins() {
        return Err(Error::BinMismatch {
            left: g1.n_bins(),
            right: g2.n_bins().min(eps.0.len()),
        });
    }
    if g1.taps() != g2.taps() || g1.stft.n_fft != g2.stft.n_fft {
        return Err(Error::ShapeMismatch(format!(
            "taps {} vs {}, n_fft {} vs {}",
            g1.taps(),
            g2.taps(),
            g1.stft.n_fft,
            g2.stft.n_fft
        )));
    }
    Ok(())
}

/// Weighted mean magnitude ratio `|G1| / |G2|`.
pub fn estimate_alpha(
    g1: &WpeFilter,
    g2: &WpeFilter,
    eps: &WeightVector,
    norm: AlphaNorm,
) -> Result<f64> {
    check_comparable(g1, g2, eps)?;
    let n_bins = g1.n_bins();
    let taps = g1.taps();
    let peak = g2.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let guard = DENOMINATOR_GUARD * peak;

    let mut tap_means = Vec::with_capacity(taps);
    for k in 0..taps {
        let mut num = 0.0;
        let mut wsum = 0.0;
        for f in 0..n_bins {
            let den = g2.get(k, f).norm();
            let w = eps.0[f];
            if den <= guard || den == 0.0 || w <= 0.0 {
                continue;
            }
            num += w * g1.get(k, f).norm() / den;
            wsum += w;
        }
        if wsum > 0.0 {
            tap_means.push(match norm {
                AlphaNorm::Normalized => num / wsum,
                AlphaNorm::Verbatim => num / n_bins as f64,
            });
        }
    }
    if tap_means.is_empty() {
        return Err(Error::NoComparableEnergy);
    }
    let alpha = match norm {
        AlphaNorm::Normalized => tap_means.iter().sum::<f64>() / tap_means.len() as f64,
        AlphaNorm::Verbatim => tap_means.iter().sum::<f64>() / taps as f64,
    };
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::NoComparableEnergy);
    }
    Ok(alpha)
}

/// Delay objective for every candidate `d ∈ 0..T` (`T = n_fft`):
/// `Re Σ_k (1/F) Σ_f ε_f · G[f,k]/|G[f,k]| · e^{j2πdf/T}` with the cross
/// term `G = G1 · conj(G2)`.
pub fn delay_objective(g1: &WpeFilter, g2: &WpeFilter, eps: &WeightVector) -> Result<Vec<f64>> {
    check_comparable(g1, g2, eps)?;
    let n_bins = g1.n_bins();
    let t = g1.stft.n_fft;
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    let mut any = false;
    for f in 0..n_bins {
        let w = eps.0[f];
        if w <= 0.0 {
            continue;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..g1.taps() {
            let cross = g1.get(k, f) * g2.get(k, f).conj();
            let mag = cross.norm();
            if mag > 0.0 && mag.is_finite() {
                acc += cross / mag;
                any = true;
            }
        }
        buf[f % t] += acc * (w / n_bins as f64);
    }
    if !any {
        return Err(Error::NoComparableEnergy);
    }
    FftPlanner::<f64>::new().plan_fft_inverse(t).process(&mut buf);
    Ok(buf.iter().map(|c| c.re).collect())
}

/// Circular delay bin maximising [`delay_objective`]; lowest bin on ties.
pub fn estimate_delay(g1: &WpeFilter, g2: &WpeFilter, eps: &WeightVector) -> Result<usize> {
    let objective = delay_objective(g1, g2, eps)?;
    let mut best = 0;
    for (d, v) in objective.iter().enumerate() {
        if *v > objective[best] {
            best = d;
        }
    }
    Ok(best)
}

/// `log N(log α̂; 0, σ²_same) − log N(log α̂; 0, σ²_diff)`.
pub fn magnitude_llr(log_alpha: f64, model: &ScoreModel) -> f64 {
    let (s, d) = (model.sigma2_same, model.sigma2_diff);
    0.5 * ((d / s).ln() + log_alpha * log_alpha * (1.0 / d - 1.0 / s))
}

fn circular_cos(d: usize, t: usize) -> f64 {
    let d = d % t;
    let dist = d.min(t - d);
    (2.0 * PI * dist as f64 / t as f64).cos()
}

/// `log Σ_d e^{κ cos(2πd/T)}`, evaluated stably.
pub fn von_mises_log_normalizer(kappa: f64, t: usize) -> f64 {
    // The maximum of κ·cos is κ (at d = 0) for κ ≥ 0.
    let sum: f64 = (0..t)
        .map(|d| (kappa * (circular_cos(d, t) - 1.0)).exp())
        .sum();
    kappa + sum.ln()
}

/// Discretised von Mises against discrete uniform on `T` bins.
pub fn delay_llr(delay_bin: usize, model: &ScoreModel) -> Result<f64> {
    let t = model.delay_bins;
    if delay_bin >= t {
        return Err(Error::OutOfRange(format!("delay bin {delay_bin} not in 0..{t}")));
    }
    let kappa = model.kappa_same;
    Ok(kappa * circular_cos(delay_bin, t) - von_mises_log_normalizer(kappa, t) + (t as f64).ln())
}

/// Order-symmetric `log α̂`: half the difference of the two directed
/// estimates, so swapping the pair flips its sign exactly.
fn symmetric_log_alpha(
    g1: &WpeFilter,
    g2: &WpeFilter,
    eps: &WeightVector,
    norm: AlphaNorm,
) -> Result<f64> {
    let forward = estimate_alpha(g1, g2, eps, norm)?;
    let backward = estimate_alpha(g2, g1, eps, norm)?;
    Ok(0.5 * (forward.ln() - backward.ln()))
}

/// Raw `(log α̂, d̂)` estimates for a pair.
pub fn pair_estimates(g1: &WpeFilter, g2: &WpeFilter, norm: AlphaNorm) -> Result<(f64, usize)> {
    let eps = joint_energy_weights(&g1.power, &g2.power)?;
    let log_alpha = symmetric_log_alpha(g1, g2, &eps, norm)?;
    let delay = estimate_delay(g1, g2, &eps)?;
    Ok((log_alpha, delay))
}

fn features_from_estimates(log_alpha: f64, delay_bin: usize, model: &ScoreModel) -> Result<PairFeatures> {
    let llr_mag = magnitude_llr(log_alpha, model);
    let llr_delay = delay_llr(delay_bin, model)?;
    let fused = model.lda_w[0] * llr_mag + model.lda_w[1] * llr_delay + model.lda_b;
    Ok(PairFeatures {
        log_alpha,
        delay_bin,
        llr_mag,
        llr_delay,
        fused,
    })
}

pub fn pair_features(g1: &WpeFilter, g2: &WpeFilter, model: &ScoreModel) -> Result<PairFeatures> {
    if g1.stft.n_fft != model.delay_bins {
        return Err(Error::ShapeMismatch(format!(
            "filter n_fft {} but model has {} delay bins",
            g1.stft.n_fft, model.delay_bins
        )));
    }
    let (log_alpha, delay) = pair_estimates(g1, g2, model.alpha_norm)?;
    features_from_estimates(log_alpha, delay, model)
}

/// Two-class LDA with pooled within-class covariance; the equal-prior
/// decision boundary is placed at score zero. Returns `(w, b)`.
pub fn fit_lda(same: &[[f64; 2]], diff: &[[f64; 2]]) -> Result<([f64; 2], f64)> {
    if same.len() < 2 || diff.len() < 2 {
        return Err(Error::NotEnoughPairs {
            needed: 2,
            same: same.len(),
            diff: diff.len(),
        });
    }
    let mean = |xs: &[[f64; 2]]| {
        let n = xs.len() as f64;
        [
            xs.iter().map(|x| x[0]).sum::<f64>() / n,
            xs.iter().map(|x| x[1]).sum::<f64>() / n,
        ]
    };
    let (ms, md) = (mean(same), mean(diff));
    let mut cov = [[0.0; 2]; 2];
    for (xs, m) in [(same, ms), (diff, md)] {
        for x in xs {
            let dx = [x[0] - m[0], x[1] - m[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += dx[i] * dx[j];
                }
            }
        }
    }
    let dof = (same.len() + diff.len() - 2) as f64;
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= dof;
        }
    }
    // Ridge keeps a constant feature (e.g. equal variances) from making the
    // pooled covariance singular.
    let ridge = 1e-9 * (cov[0][0] + cov[1][1]) + 1e-12;
    cov[0][0] += ridge;
    cov[1][1] += ridge;
    let delta = [ms[0] - md[0], ms[1] - md[1]];
    let w = solve2(cov, delta)
        .ok_or_else(|| Error::InvalidConfig("degenerate LDA covariance".into()))?;
    let b = -(w[0] * (ms[0] + md[0]) + w[1] * (ms[1] + md[1])) / 2.0;
    Ok((w, b))
}

/// Von Mises concentration from the mean resultant length, clamped to
/// `[0, KAPPA_MAX]`.
pub fn kappa_from_resultant(r: f64) -> f64 {
    if r >= 1.0 - 1e-12 {
        return KAPPA_MAX;
    }
    let k = r * (2.0 - r * r) / (1.0 - r * r);
    k.clamp(0.0, KAPPA_MAX)
}

/// Fits a model from already-estimated `(log α̂, d̂)` pairs.
pub fn train_from_estimates(
    same: &[(f64, usize)],
    diff: &[(f64, usize)],
    delay_bins: usize,
    wpe: WpeConfig,
    stft: StftConfig,
) -> Result<ScoreModel> {
    if same.len() < 2 || diff.len() < 2 {
        return Err(Error::NotEnoughPairs {
            needed: 2,
            same: same.len(),
            diff: diff.len(),
        });
    }
    if let Some(&(_, d)) = same.iter().chain(diff).find(|(_, d)| *d >= delay_bins) {
        return Err(Error::OutOfRange(format!("delay bin {d} not in 0..{delay_bins}")));
    }
    let variance = |xs: &[(f64, usize)]| {
        (xs.iter().map(|(a, _)| a * a).sum::<f64>() / xs.len() as f64).max(VARIANCE_FLOOR)
    };
    let resultant = same
        .iter()
        .map(|&(_, d)| circular_cos(d, delay_bins))
        .sum::<f64>()
        / same.len() as f64;
    let mut model = ScoreModel {
        sigma2_same: variance(same),
        sigma2_diff: variance(diff),
        kappa_same: kappa_from_resultant(resultant),
        lda_w: [1.0, 1.0],
        lda_b: 0.0,
        delay_bins,
        alpha_norm: AlphaNorm::Normalized,
        min_score: 0.0,
        wpe,
        stft,
    };
    let llrs = |xs: &[(f64, usize)], model: &ScoreModel| -> Result<Vec<[f64; 2]>> {
        xs.iter()
            .map(|&(a, d)| Ok([magnitude_llr(a, model), delay_llr(d, model)?]))
            .collect()
    };
    let same_llr = llrs(same, &model)?;
    let diff_llr = llrs(diff, &model)?;
    let (w, b) = fit_lda(&same_llr, &diff_llr)?;
    model.lda_w = w;
    model.lda_b = b;
    model.min_score = same_llr
        .iter()
        .chain(&diff_llr)
        .map(|x| w[0] * x[0] + w[1] * x[1] + b)
        .fold(f64::INFINITY, f64::min);
    Ok(model)
}

/// Trains σ², κ and the LDA fusion from labelled filter pairs.
pub fn train_model(
    same_pairs: &[(&WpeFilter, &WpeFilter)],
    diff_pairs: &[(&WpeFilter, &WpeFilter)],
    delay_bins: usize,
) -> Result<ScoreModel> {
    if same_pairs.len() < 2 || diff_pairs.len() < 2 {
        return Err(Error::NotEnoughPairs {
            needed: 2,
            same: same_pairs.len(),
            diff: diff_pairs.len(),
        });
    }
    let first = same_pairs[0].0;
    if first.stft.n_fft != delay_bins {
        return Err(Error::ShapeMismatch(format!(
            "filter n_fft {} but {} delay bins requested",
            first.stft.n_fft, delay_bins
        )));
    }
    let estimate = |pairs: &[(&WpeFilter, &WpeFilter)]| -> Result<Vec<(f64, usize)>> {
        pairs
            .par_iter()
            .map(|(a, b)| pair_estimates(a, b, AlphaNorm::Normalized))
            .collect()
    };
    let same = estimate(same_pairs)?;
    let diff = estimate(diff_pairs)?;
    train_from_estimates(&same, &diff, delay_bins, first.config, first.stft)
}
