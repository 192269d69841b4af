//! Image-method room impulse responses and scene rendering.
//!
//! Shoebox rooms only, with frequency-independent wall reflection. Image
//! sources are placed with an 81-tap Hann-windowed sinc so that fractional
//! propagation delays keep their phase.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::timeline::Timeline;
use crate::{Error, Result};

pub const SINC_TAPS: usize = 81;
/// Silence between concatenated sources, seconds.
pub const CONCAT_GAP: f64 = 0.5;
/// Leading/trailing samples below this level (−50 dBFS) are stripped.
pub const SILENCE_DBFS: f64 = -50.0;
pub const PEAK_LEVEL: f64 = 0.9;

pub type Position = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Absorption {
    /// Target reverberation time in seconds; converted to one uniform
    /// reflection coefficient.
    Rt60(f64),
    /// Pressure reflection coefficients for the walls at x=0, x=Lx, y=0,
    /// y=Ly, z=0, z=Lz.
    Reflection([f64; 6]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub absorption: Absorption,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    pub sample_rate: u32,
    /// RIR length in seconds; defaults to the (estimated) RT60.
    #[serde(default)]
    pub rir_seconds: Option<f64>,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

impl RoomSpec {
    pub fn with_rt60(dims: [f64; 3], rt60: f64, sample_rate: u32) -> Self {
        Self {
            dims,
            absorption: Absorption::Rt60(rt60),
            speed_of_sound: default_speed_of_sound(),
            sample_rate,
            rir_seconds: None,
        }
    }

    fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    fn sabine_constant(&self) -> f64 {
        24.0 * 10f64.ln() / self.speed_of_sound
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidConfig(format!("room dims {:?}", self.dims)));
        }
        if !(self.speed_of_sound > 0.0) || self.sample_rate == 0 {
            return Err(Error::InvalidConfig("speed of sound and sample rate must be positive".into()));
        }
        match self.absorption {
            Absorption::Rt60(t) if !(t > 0.0) || !t.is_finite() => {
                Err(Error::InvalidConfig(format!("rt60 {t}")))
            }
            Absorption::Reflection(b) if b.iter().any(|v| !(0.0..1.0).contains(v)) => {
                Err(Error::InvalidConfig(format!("reflection coefficients {b:?}")))
            }
            _ => Ok(()),
        }
    }

    /// Per-wall pressure reflection coefficients. Sabine absorption is used
    /// when it stays below one, Eyring otherwise.
    pub fn reflection_coefficients(&self) -> [f64; 6] {
        match self.absorption {
            Absorption::Reflection(b) => b,
            Absorption::Rt60(rt60) => {
                let x = self.sabine_constant() * self.volume() / (self.surface() * rt60);
                let alpha = if x < 1.0 { x } else { 1.0 - (-x).exp() };
                [(1.0 - alpha).sqrt(); 6]
            }
        }
    }

    /// Reverberation time used to size the RIR.
    pub fn rt60_estimate(&self) -> f64 {
        match self.absorption {
            Absorption::Rt60(t) => t,
            Absorption::Reflection(b) => {
                let [x, y, z] = self.dims;
                let areas = [y * z, y * z, x * z, x * z, x * y, x * y];
                let absorbed: f64 = areas.iter().zip(b).map(|(a, r)| a * (1.0 - r * r)).sum();
                let mean_alpha = (absorbed / self.surface()).clamp(1e-6, 1.0 - 1e-12);
                self.sabine_constant() * self.volume() / (-self.surface() * (1.0 - mean_alpha).ln())
            }
        }
    }

    pub fn rir_samples(&self) -> usize {
        let secs = self.rir_seconds.unwrap_or_else(|| self.rt60_estimate());
        ((secs * self.sample_rate as f64).ceil() as usize).max(1)
    }

    fn contains(&self, p: &Position) -> bool {
        p.iter().zip(&self.dims).all(|(v, d)| *v > 0.0 && v < d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub src: Position,
    pub mic: Position,
}

impl Rir {
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }

    pub fn peak_index(&self) -> usize {
        self.taps
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
            .0
    }
}

/// Adds a windowed-sinc impulse of `amp` at fractional sample `delay`.
///
/// With `t = m - frac`, `sin(πt) = (-1)^m·(-sin(π·frac))` and the Hann term
/// expands into precomputed `cos/sin(2πm/L)` tables, so only three
/// transcendentals are needed per impulse.
fn add_fractional_impulse(out: &mut [f64], delay: f64, amp: f64, table: &SincTable) {
    let half = (SINC_TAPS / 2) as isize;
    let base = delay.floor();
    let frac = delay - base;
    let base = base as isize;
    let s_frac = -(PI * frac).sin();
    let phi = 2.0 * PI * frac / SINC_TAPS as f64;
    let (sin_phi, cos_phi) = phi.sin_cos();
    for n in 0..SINC_TAPS as isize {
        let idx = base + n - half;
        if idx < 0 || idx as usize >= out.len() {
            continue;
        }
        let m = n - half;
        let t = m as f64 - frac;
        let k = n as usize;
        let w = 0.5 * (1.0 + table.cos[k] * cos_phi + table.sin[k] * sin_phi);
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            sign * s_frac / (PI * t)
        };
        out[idx as usize] += amp * w * sinc;
    }
}

/// `cos/sin(2πm/L)` for tap offsets `m = n - L/2`.
struct SincTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl SincTable {
    fn new() -> Self {
        let half = (SINC_TAPS / 2) as f64;
        let angle = |n: usize| 2.0 * PI * (n as f64 - half) / SINC_TAPS as f64;
        Self {
            cos: (0..SINC_TAPS).map(|n| angle(n).cos()).collect(),
            sin: (0..SINC_TAPS).map(|n| angle(n).sin()).collect(),
        }
    }
}

/// Allen–Berkley image-source RIR. `max_order` caps the total reflection
/// count; `None` keeps every image that arrives within the RIR length.
pub fn image_rir(room: &RoomSpec, src: Position, mic: Position, max_order: Option<usize>) -> Result<Rir> {
    room.validate()?;
    for p in [src, mic] {
        if !room.contains(&p) {
            return Err(Error::OutsideRoom(p));
        }
    }
    if src == mic {
        return Err(Error::InvalidConfig("source and microphone coincide".into()));
    }
    let fs = room.sample_rate as f64;
    let c = room.speed_of_sound;
    let len = room.rir_samples();
    let beta = room.reflection_coefficients();
    let max_dist = (len as f64 + SINC_TAPS as f64) / fs * c;
    let l = room.dims;
    let span = |d: f64| (max_dist / (2.0 * d)).ceil() as i64 + 1;
    let (nx, ny, nz) = (span(l[0]), span(l[1]), span(l[2]));
    let order_ok = |o: i64| max_order.is_none_or(|m| o as usize <= m);
    let table = SincTable::new();

    let partials: Vec<Vec<f64>> = (-nx..=nx)
        .into_par_iter()
        .map(|mx| {
            let mut h = vec![0.0; len];
            for qx in 0..2i64 {
                let dx = (1 - 2 * qx) as f64 * src[0] + 2.0 * mx as f64 * l[0] - mic[0];
                let gx = beta[0].powi((mx - qx).abs() as i32) * beta[1].powi(mx.abs() as i32);
                let ox = (2 * mx - qx).abs();
                for my in -ny..=ny {
                    for qy in 0..2i64 {
                        let dy = (1 - 2 * qy) as f64 * src[1] + 2.0 * my as f64 * l[1] - mic[1];
                        let gy = beta[2].powi((my - qy).abs() as i32) * beta[3].powi(my.abs() as i32);
                        let oy = (2 * my - qy).abs();
                        for mz in -nz..=nz {
                            for qz in 0..2i64 {
                                let oz = (2 * mz - qz).abs();
                                if !order_ok(ox + oy + oz) {
                                    continue;
                                }
                                let dz = (1 - 2 * qz) as f64 * src[2] + 2.0 * mz as f64 * l[2] - mic[2];
                                let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                                let delay = dist / c * fs;
                                if delay >= len as f64 + (SINC_TAPS / 2) as f64 {
                                    continue;
                                }
                                let gz = beta[4].powi((mz - qz).abs() as i32)
                                    * beta[5].powi(mz.abs() as i32);
                                let amp = gx * gy * gz / (4.0 * PI * dist);
                                add_fractional_impulse(&mut h, delay, amp, &table);
                            }
                        }
                    }
                }
            }
            h
        })
        .collect();

    let mut taps = vec![0.0; len];
    for p in &partials {
        for (t, v) in taps.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok(Rir {
        taps,
        sample_rate: room.sample_rate,
        src,
        mic,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RirParts {
    pub direct: Vec<f64>,
    pub early: Vec<f64>,
    pub late: Vec<f64>,
}

/// Splits an RIR around its peak: `direct` is the peak ± `direct_win_ms`,
/// `early` runs to `early_ms` after the peak (and takes any pre-peak
/// leakage), `late` is everything after that.
pub fn decompose_rir(rir: &Rir, direct_win_ms: f64, early_ms: f64) -> RirParts {
    let n = rir.taps.len();
    let fs = rir.sample_rate as f64;
    let peak = rir.peak_index();
    let dw = (direct_win_ms * 1e-3 * fs).round() as usize;
    let ew = ((early_ms * 1e-3 * fs).round() as usize).max(dw);
    let (d0, d1) = (peak.saturating_sub(dw), (peak + dw).min(n - 1));
    let e1 = (peak + ew).min(n - 1);
    let mut parts = RirParts {
        direct: vec![0.0; n],
        early: vec![0.0; n],
        late: vec![0.0; n],
    };
    for (i, &v) in rir.taps.iter().enumerate() {
        if (d0..=d1).contains(&i) {
            parts.direct[i] = v;
        } else if i < d0 || i <= e1 {
            parts.early[i] = v;
        } else {
            parts.late[i] = v;
        }
    }
    parts
}

/// Linear convolution through the FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Drops leading and trailing samples quieter than −50 dBFS.
pub fn strip_silence(signal: &[f64]) -> &[f64] {
    let thr = 10f64.powf(SILENCE_DBFS / 20.0);
    let first = signal.iter().position(|v| v.abs() >= thr);
    let last = signal.iter().rposition(|v| v.abs() >= thr);
    match (first, last) {
        (Some(a), Some(b)) => &signal[a..=b],
        _ => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    /// Sources back to back, separated by a fixed gap.
    Concat,
    /// Sources summed at their own onsets.
    Mix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSource {
    pub signal: Vec<f64>,
    pub position: Position,
    pub label: String,
    /// Onset in seconds; used by [`SceneMode::Mix`] only.
    pub onset: f64,
}

/// Renders without the final peak normalisation.
pub fn render_scene_unnormalized(
    recording_id: &str,
    sources: &[SceneSource],
    room: &RoomSpec,
    mic: Position,
    mode: SceneMode,
    max_order: Option<usize>,
) -> Result<(Vec<f64>, Timeline)> {
    if sources.is_empty() {
        return Err(Error::EmptySignal);
    }
    let fs = room.sample_rate as f64;
    let mut timeline = Timeline::new(recording_id);
    let mut placed: Vec<(usize, Vec<f64>)> = Vec::with_capacity(sources.len());
    let mut cursor = 0.0;
    for src in sources {
        let dry = strip_silence(&src.signal);
        if dry.is_empty() {
            return Err(Error::EmptySignal);
        }
        let onset = match mode {
            SceneMode::Concat => cursor,
            SceneMode::Mix => src.onset,
        };
        if !(onset >= 0.0) {
            return Err(Error::OutOfRange(format!("onset {onset}")));
        }
        let start = (onset * fs).round() as usize;
        let dur = dry.len() as f64 / fs;
        timeline.push(src.label.clone(), start as f64 / fs, start as f64 / fs + dur);
        cursor = start as f64 / fs + dur + CONCAT_GAP;
        let rir = image_rir(room, src.position, mic, max_order)?;
        placed.push((start, fft_convolve(dry, &rir.taps)));
    }
    let total = placed.iter().map(|(s, y)| s + y.len()).max().unwrap_or(0);
    let mut out = vec![0.0; total];
    for (s, y) in &placed {
        for (o, v) in out[*s..].iter_mut().zip(y) {
            *o += v;
        }
    }
    Ok((out, timeline))
}

/// Convolves each source with its image-method RIR, places it per `mode`,
/// and peak-normalises the mix to 0.9 full scale.
pub fn render_scene(
    recording_id: &str,
    sources: &[SceneSource],
    room: &RoomSpec,
    mic: Position,
    mode: SceneMode,
    max_order: Option<usize>,
) -> Result<(Vec<f64>, Timeline)> {
    let (mut out, timeline) = render_scene_unnormalized(recording_id, sources, room, mic, mode, max_order)?;
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK_LEVEL / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Ok((out, timeline))
}

/// Second-order resonator (constant peak gain band-pass).
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Self {
            b0: 1.0 - r,
            a1: -2.0 * r * theta.cos(),
            a2: r * r,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * x - self.a1 * self.z1 - self.a2 * self.z2;
        self.z2 = self.z1;
        self.z1 = y;
        y
    }
}

/// Deterministic noise-excited speech-like test signal: syllables of
/// formant-filtered noise with raised-cosine envelopes, separated by short
/// low-level gaps. Broadband, with no frame-to-frame phase predictability.
pub fn synthetic_speech(duration: f64, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let nyq = fs / 2.0;
    while out.len() < n {
        let syl = (rng.gen_range(0.12..0.35) * fs) as usize;
        let gap = (rng.gen_range(0.03..0.12) * fs) as usize;
        let level = rng.gen_range(0.3..1.0);
        let formants = [
            rng.gen_range(300.0..900.0f64),
            rng.gen_range(900.0..2500.0f64),
            rng.gen_range(2500.0..3800.0f64),
        ];
        let mut res: Vec<Resonator> = formants
            .iter()
            .filter(|f| **f < 0.9 * nyq)
            .map(|&f| Resonator::new(f, rng.gen_range(80.0..250.0), fs))
            .collect();
        let gains: Vec<f64> = (0..res.len()).map(|i| 8.0 / (i + 1) as f64).collect();
        let ramp = (0.02 * fs) as usize;
        for i in 0..syl + gap {
            let env = if i < syl {
                let up = (i as f64 / ramp as f64).min(1.0);
                let down = ((syl - i) as f64 / ramp as f64).min(1.0);
                let shape = |x: f64| 0.5 - 0.5 * (PI * x).cos();
                level * shape(up) * shape(down)
            } else {
                0.0
            };
            let e: f64 = rng.gen_range(-1.0..1.0);
            let voiced: f64 = res.iter_mut().zip(&gains).map(|(r, g)| g * r.tick(e)).sum();
            let floor = 0.02 * rng.gen_range(-1.0..1.0);
            out.push(env * (voiced + 0.3 * e) + floor);
        }
    }
    out.truncate(n);
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK_LEVEL / peak);
    }
    out
}
