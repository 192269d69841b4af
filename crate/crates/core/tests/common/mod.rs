//! Synthetic rooms, scenes and trained models shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use wpeloc::diarizer::{
    ahc_cluster, extract_filters, min_window_seconds, score_matrix, segment_windows, windows_to_timeline, ClusterMode,
    DiarizeConfig, ScoreMatrix,
};
use wpeloc::pairscore::{pair_estimates, train_from_estimates, AlphaNorm, ScoreModel};
use wpeloc::roomsim::{
    fft_convolve, image_rir, render_scene, strip_silence, synthetic_speech, Position, RoomSpec,
    SceneMode, SceneSource,
};
use wpeloc::spectral::{stft, StftConfig};
use wpeloc::timeline::Timeline;
use wpeloc::wpe::{estimate_wpe, WpeConfig, WpeFilter};

pub const FS: u32 = 16_000;
pub const DIMS: [f64; 3] = [6.0, 5.0, 3.0];
pub const MIC: Position = [3.3, 2.3, 1.5];

pub fn distance(a: Position, b: Position) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Uniform position at least 0.5 m from the walls, 1-2 m high and at least
/// 1 m from the microphone.
pub fn random_position(rng: &mut ChaCha8Rng) -> Position {
    loop {
        let p = [
            rng.gen_range(0.5..DIMS[0] - 0.5),
            rng.gen_range(0.5..DIMS[1] - 0.5),
            rng.gen_range(1.0..2.0),
        ];
        if distance(p, MIC) > 1.0 {
            return p;
        }
    }
}

pub fn room(rt60: f64) -> RoomSpec {
    RoomSpec::with_rt60(DIMS, rt60, FS)
}

/// WPE filter of `duration` seconds of synthetic speech through `taps`.
pub fn filter_through(taps: &[f64], seed: u64, duration: f64) -> WpeFilter {
    let dry = synthetic_speech(duration, FS, seed);
    let wet = fft_convolve(strip_silence(&dry), taps);
    let spec = stft(&wet, StftConfig::default(), FS).expect("stft");
    estimate_wpe(&spec, &WpeConfig::default()).expect("wpe").filter
}

/// Two independent filters per position. Pair `i` of the result shares a
/// position; `(a_i, b_{i+1})` are different-position pairs.
pub fn position_filter_pairs(
    rt60: f64,
    seed: u64,
    n_positions: usize,
    duration: f64,
) -> Vec<(WpeFilter, WpeFilter)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Position> = (0..n_positions).map(|_| random_position(&mut rng)).collect();
    let r = room(rt60);
    positions
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let rir = image_rir(&r, p, MIC, None).expect("rir");
            let base = seed * 1_000_003 + 2 * i as u64;
            (
                filter_through(&rir.taps, base, duration),
                filter_through(&rir.taps, base + 1, duration),
            )
        })
        .collect()
}

/// `(log α̂, delay bin)` per pair.
pub type Estimates = Vec<(f64, usize)>;

pub fn same_diff_estimates(pairs: &[(WpeFilter, WpeFilter)]) -> (Estimates, Estimates) {
    let n = pairs.len();
    let est = |a: &WpeFilter, b: &WpeFilter| pair_estimates(a, b, AlphaNorm::Normalized).expect("pair");
    let same = (0..n).map(|i| est(&pairs[i].0, &pairs[i].1)).collect();
    let diff = (0..n).map(|i| est(&pairs[i].0, &pairs[(i + 1) % n].1)).collect();
    (same, diff)
}

/// Model trained on same/different pairs drawn from `n_positions` random
/// positions in a room with the given rt60.
pub fn train_synthetic_model(rt60: f64, seed: u64, n_positions: usize, duration: f64) -> ScoreModel {
    let pairs = position_filter_pairs(rt60, seed, n_positions, duration);
    let (same, diff) = same_diff_estimates(&pairs);
    train_from_estimates(&same, &diff, StftConfig::default().n_fft, WpeConfig::default(), StftConfig::default())
        .expect("train")
}

pub struct Scene {
    pub audio: Vec<f64>,
    pub reference: Timeline,
    pub rt60: f64,
}

/// Two talkers at distinct positions (at least 1 m apart), alternating
/// `turns` times each in concatenation; rt60 drawn from 0.4-0.6 s.
pub fn two_talker_scene(seed: u64, turn_seconds: f64, turns: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rt60 = rng.gen_range(0.4..0.6);
    let a = random_position(&mut rng);
    let b = loop {
        let b = random_position(&mut rng);
        if distance(a, b) > 1.0 {
            break b;
        }
    };
    let sources: Vec<SceneSource> = (0..2 * turns)
        .map(|i| {
            let (label, position) = if i % 2 == 0 { ("A", a) } else { ("B", b) };
            SceneSource {
                signal: synthetic_speech(turn_seconds, FS, seed * 7919 + i as u64),
                position,
                label: label.into(),
                onset: 0.0,
            }
        })
        .collect();
    let (audio, reference) =
        render_scene(&format!("scene{seed}"), &sources, &room(rt60), MIC, SceneMode::Concat, None)
            .expect("scene");
    Scene {
        audio,
        reference,
        rt60,
    }
}

/// Windows and score matrix for one scene, ready for clustering in any mode.
pub struct ScoredScene {
    pub windows: Vec<(f64, f64)>,
    pub scores: ScoreMatrix,
}

pub fn score_scene(scene: &Scene, model: &ScoreModel, window: f64, shift: f64) -> ScoredScene {
    let cfg = DiarizeConfig {
        window,
        shift,
        ..Default::default()
    };
    let min_len = min_window_seconds(&model.stft, &model.wpe, FS);
    let windows = segment_windows(&scene.reference, &cfg, min_len).expect("windows");
    let filters = extract_filters(&scene.audio, FS, &windows, model.stft, &model.wpe).expect("filters");
    let scores = score_matrix(&filters, model).expect("scores");
    ScoredScene { windows, scores }
}

pub fn cluster_timeline(scene: &Scene, scored: &ScoredScene, mode: ClusterMode) -> Timeline {
    let labels: Vec<String> = ahc_cluster(&scored.scores, mode)
        .iter()
        .map(|i| format!("spk{}", i + 1))
        .collect();
    windows_to_timeline(&scene.reference.recording_id, &scored.windows, &labels)
}

/// Mann-Whitney AUC, ties counted half.
pub fn auc(positive: &[f64], negative: &[f64]) -> f64 {
    let mut acc = 0.0;
    for p in positive {
        for n in negative {
            acc += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / (positive.len() * negative.len()) as f64
}
