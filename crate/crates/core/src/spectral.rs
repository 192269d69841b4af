//! STFT analysis/synthesis and the joint-energy bin weighting.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic square-root Hann; exact reconstruction at hop = n_fft/2.
    #[default]
    SqrtHann,
    /// Periodic Hann.
    Hann,
    Rect,
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let hann = 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos());
                match self {
                    WindowKind::SqrtHann => hann.sqrt(),
                    WindowKind::Hann => hann,
                    WindowKind::Rect => 1.0,
                }
            })
            .collect()
    }
}

/// Analysis parameters shared by every spectrogram of a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 256,
            hop: 128,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a signal of `len` samples, or `None` if it is shorter
    /// than one window.
    pub fn n_frames(&self, len: usize) -> Option<usize> {
        (len >= self.n_fft).then(|| 1 + (len - self.n_fft) / self.hop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "need n_fft >= 2 and 0 < hop <= n_fft, got n_fft {} hop {}",
                self.n_fft, self.hop
            )));
        }
        Ok(())
    }
}

/// One-sided complex STFT, frames × bins, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    config: StftConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn from_data(
        data: Vec<Complex64>,
        n_frames: usize,
        config: StftConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        config.validate()?;
        if n_frames == 0 || data.len() != n_frames * config.n_bins() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} frames of {} bins",
                data.len(),
                n_frames,
                config.n_bins()
            )));
        }
        Ok(Self {
            data,
            n_frames,
            config,
            sample_rate,
        })
    }

    pub fn zeros(n_frames: usize, config: StftConfig, sample_rate: u32) -> Result<Self> {
        Self::from_data(
            vec![Complex64::new(0.0, 0.0); n_frames * config.n_bins()],
            n_frames,
            config,
            sample_rate,
        )
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    pub fn n_fft(&self) -> usize {
        self.config.n_fft
    }

    pub fn hop(&self) -> usize {
        self.config.hop
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.n_bins() + bin]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, bin: usize, value: Complex64) {
        let f = self.n_bins();
        self.data[frame * f + bin] = value;
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        let f = self.n_bins();
        &self.data[frame * f..(frame + 1) * f]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Sample range `[start, end)` on which overlap-add sees full window
    /// overlap, given the synthesized length.
    pub fn interior(&self) -> (usize, usize) {
        let n_fft = self.n_fft();
        let hop = self.hop();
        let start = n_fft - hop;
        let end = (self.n_frames - 1) * hop + hop;
        (start.min(end), end)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }
}

pub fn stft(signal: &[f64], config: StftConfig, sample_rate: u32) -> Result<Spectrogram> {
    config.validate()?;
    let n_fft = config.n_fft;
    let n_frames = config.n_frames(signal.len()).ok_or(Error::SegmentTooShort {
        len: signal.len(),
        needed: n_fft,
    })?;
    let n_bins = config.n_bins();
    let window = config.window.coefficients(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut data = Vec::with_capacity(n_frames * n_bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for frame in 0..n_frames {
        let offset = frame * config.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(signal[offset + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Spectrogram::from_data(data, n_frames, config, sample_rate)
}

/// Constant overlap-add gain of the squared window at this hop, if any.
fn cola_gain(window: &[f64], hop: usize) -> Option<f64> {
    let n = window.len();
    let mut sums = vec![0.0; hop];
    for (i, w) in window.iter().enumerate() {
        sums[i % hop] += w * w;
    }
    let mean = sums.iter().sum::<f64>() / hop as f64;
    if mean <= 0.0 {
        return None;
    }
    let worst = sums
        .iter()
        .map(|s| (s - mean).abs())
        .fold(0.0, f64::max);
    (worst <= 1e-9 * mean && n >= hop).then_some(mean)
}

/// Weighted overlap-add inverse, using the analysis window for synthesis.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let n_fft = spec.n_fft();
    let hop = spec.hop();
    let window = spec.config.window.coefficients(n_fft);
    let gain = cola_gain(&window, hop).ok_or(Error::NonCola { n_fft, hop })?;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);

    let len = (spec.n_frames - 1) * hop + n_fft;
    let mut out = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let n_bins = spec.n_bins();
    for frame in 0..spec.n_frames {
        let row = spec.frame(frame);
        buf[..n_bins].copy_from_slice(row);
        // Hermitian completion of the one-sided spectrum.
        for k in n_bins..n_fft {
            buf[k] = buf[n_fft - k].conj();
        }
        buf[0].im = 0.0;
        if n_fft.is_multiple_of(2) {
            buf[n_fft / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let offset = frame * hop;
        for i in 0..n_fft {
            out[offset + i] += buf[i].re / n_fft as f64 * window[i] / gain;
        }
    }
    Ok(out)
}

/// Per-bin mean power over frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile(pub Vec<f64>);

impl PowerProfile {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn mean_power(spec: &Spectrogram) -> PowerProfile {
    let n_bins = spec.n_bins();
    let mut acc = vec![0.0; n_bins];
    for frame in 0..spec.n_frames() {
        for (a, x) in acc.iter_mut().zip(spec.frame(frame)) {
            *a += x.norm_sqr();
        }
    }
    let n = spec.n_frames() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    PowerProfile(acc)
}

/// Joint-energy bin weights; nonnegative, summing to at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Mean power below this (per bin, on average) counts as silence.
const SILENCE_FLOOR: f64 = 1e-12;

pub fn joint_energy_weights(p1: &PowerProfile, p2: &PowerProfile) -> Result<WeightVector> {
    if p1.len() != p2.len() {
        return Err(Error::BinMismatch {
            left: p1.len(),
            right: p2.len(),
        });
    }
    let floor = SILENCE_FLOOR * p1.len() as f64;
    let (t1, t2) = (p1.total(), p2.total());
    if !(t1 > floor) || !(t2 > floor) {
        return Err(Error::SilentSegment);
    }
    Ok(WeightVector(
        p1.0
            .iter()
            .zip(&p2.0)
            .map(|(a, b)| ((a / t1) * (b / t2)).sqrt())
            .collect(),
    ))
}
