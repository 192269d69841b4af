//! Batch command-line front end.
//!
//! Every subcommand reads one JSON config (`--config`), may override parts
//! of it with flags, and writes its outputs under `--out`. Exit codes: 0 on
//! success, 1 on usage errors, 2 on data errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav};
use crate::diarizer::{
    diarize_detailed, extract_filters, min_window_seconds, segment_windows, ClusterMode,
    DiarizeConfig,
};
use crate::metrics::{der, der_chunked, random_baseline, write_der_csv, DerBreakdown};
use crate::pairscore::{train_model, ScoreModel};
use crate::roomsim::{render_scene, synthetic_speech, Position, RoomSpec, SceneMode, SceneSource};
use crate::spectral::StftConfig;
use crate::timeline::{read_rttm, write_rttm, Timeline};
use crate::wpe::{WpeConfig, WpeFilter};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wpeloc", version, about = "Location-based diarization from WPE filters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene description to WAV + reference RTTM.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scene seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a score model from a manifest of labelled segment pairs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Diarize every recording of an experiment config.
    Diarize {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Also write seeded random-label hypotheses under `<out>/random/`.
        #[arg(long)]
        random_baseline: bool,
    },
    /// Score hypothesis RTTM against reference RTTM.
    Eval {
        /// Reference RTTM file or directory of `.rttm` files.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis RTTM file or directory.
        #[arg(long)]
        hyp: PathBuf,
        /// Score equal-length chunks independently.
        #[arg(long)]
        chunk_len: Option<f64>,
        /// Directory for `der.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// DER over a grid of window lengths and shifts.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated window lengths, seconds.
        #[arg(long, value_delimiter = ',', required = true)]
        windows: Vec<f64>,
        /// Comma-separated shifts, seconds.
        #[arg(long, value_delimiter = ',', required = true)]
        shifts: Vec<f64>,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub chunk_len: Option<f64>,
    #[arg(long, conflicts_with = "num_speakers")]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub num_speakers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Paths and settings of one batch experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub audio_dir: PathBuf,
    /// Reference RTTMs, one `<id>.rttm` per `<id>.wav`; their union is the
    /// oracle speech region set.
    pub rttm_dir: PathBuf,
    pub model: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub diarize: DiarizeConfig,
    /// Defaults to the configuration stored in the model.
    #[serde(default)]
    pub wpe: Option<WpeConfig>,
    /// Cluster to the number of reference speakers of each recording.
    #[serde(default)]
    pub oracle_speakers: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.audio_dir, &mut cfg.rttm_dir, &mut cfg.model, &mut cfg.out_dir] {
            *p = resolve(base, p);
        }
        Ok(cfg)
    }

    fn apply(&mut self, args: &ExperimentArgs) {
        if let Some(c) = args.chunk_len {
            self.diarize.chunk_len = Some(c);
        }
        if let Some(t) = args.threshold {
            self.diarize.cluster = ClusterMode::Threshold(t);
            self.oracle_speakers = false;
        }
        if let Some(n) = args.num_speakers {
            self.diarize.cluster = ClusterMode::KnownCount(n);
            self.oracle_speakers = false;
        }
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(o) = &args.out {
            self.out_dir = o.clone();
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceAudio {
    Wav(PathBuf),
    /// Generated test signal; its seed is derived from the scene seed and
    /// the source index.
    Synth { duration: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSourceSpec {
    pub label: String,
    pub position: Position,
    pub audio: SourceAudio,
    #[serde(default)]
    pub onset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub id: String,
    pub seed: u64,
    pub room: RoomSpec,
    pub mic: Position,
    pub mode: SceneMode,
    #[serde(default)]
    pub max_order: Option<usize>,
    pub sources: Vec<SceneSourceSpec>,
}

/// Renders a scene; returns the written WAV and RTTM paths.
pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(PathBuf, PathBuf)> {
    let text = fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut scene: SceneConfig = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        scene.seed = s;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let fs_hz = scene.room.sample_rate;
    let mut sources = Vec::with_capacity(scene.sources.len());
    for (i, spec) in scene.sources.iter().enumerate() {
        let signal = match &spec.audio {
            SourceAudio::Wav(p) => {
                let path = resolve(base, p);
                let (x, sr) = read_wav(&path)?;
                if sr != fs_hz {
                    return Err(Error::InvalidConfig(format!(
                        "{}: sample rate {sr} but room uses {fs_hz}",
                        path.display()
                    )));
                }
                x
            }
            SourceAudio::Synth { duration } => {
                synthetic_speech(*duration, fs_hz, scene.seed.wrapping_mul(1000).wrapping_add(i as u64))
            }
        };
        sources.push(SceneSource {
            signal,
            position: spec.position,
            label: spec.label.clone(),
            onset: spec.onset,
        });
    }
    let (audio, timeline) = render_scene(&scene.id, &sources, &scene.room, scene.mic, scene.mode, scene.max_order)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let wav = out.join(format!("{}.wav", scene.id));
    let rttm = out.join(format!("{}.rttm", scene.id));
    write_wav(&wav, &audio, fs_hz)?;
    write_rttm(&rttm, &[timeline])?;
    Ok((wav, rttm))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRef {
    pub wav: PathBuf,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Same,
    Diff,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSpec {
    pub a: SegmentRef,
    pub b: SegmentRef,
    pub label: PairLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainManifest {
    pub seed: u64,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub wpe: WpeConfig,
    pub pairs: Vec<PairSpec>,
}

/// Extracts one filter per distinct segment of the manifest, then trains.
pub fn train_from_manifest(manifest: &TrainManifest, base: &Path) -> Result<ScoreModel> {
    let mut audio: BTreeMap<PathBuf, (Vec<f64>, u32)> = BTreeMap::new();
    for p in &manifest.pairs {
        for seg in [&p.a, &p.b] {
            let path = resolve(base, &seg.wav);
            if let std::collections::btree_map::Entry::Vacant(e) = audio.entry(path) {
                let loaded = read_wav(e.key())?;
                e.insert(loaded);
            }
        }
    }
    let filter_of = |seg: &SegmentRef| -> Result<WpeFilter> {
        let (x, sr) = &audio[&resolve(base, &seg.wav)];
        let f = extract_filters(x, *sr, &[(seg.start, seg.end)], manifest.stft, &manifest.wpe)?;
        Ok(f.into_iter().next().expect("one window"))
    };
    let pairs: Vec<(PairLabel, WpeFilter, WpeFilter)> = manifest
        .pairs
        .par_iter()
        .map(|p| Ok((p.label, filter_of(&p.a)?, filter_of(&p.b)?)))
        .collect::<Result<_>>()?;
    let pick = |label| -> Vec<(&WpeFilter, &WpeFilter)> {
        pairs.iter().filter(|p| p.0 == label).map(|p| (&p.1, &p.2)).collect()
    };
    train_model(&pick(PairLabel::Same), &pick(PairLabel::Diff), manifest.stft.n_fft)
}

pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> Result<ScoreModel> {
    let text = fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut manifest: TrainManifest = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        manifest.seed = s;
    }
    let model = train_from_manifest(&manifest, config.parent().unwrap_or(Path::new(".")))?;
    model.save(out)?;
    Ok(model)
}

/// A recording of an experiment: audio plus its reference timeline.
struct Recording {
    id: String,
    audio: Vec<f64>,
    sample_rate: u32,
    reference: Timeline,
}

fn load_recordings(cfg: &ExperimentConfig) -> Result<Vec<Recording>> {
    let dir = &cfg.audio_dir;
    let mut wavs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    wavs.iter()
        .map(|wav| {
            let id = wav.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let rttm = cfg.rttm_dir.join(format!("{id}.rttm"));
            let reference = read_rttm(&rttm)?
                .into_iter()
                .find(|t| t.recording_id == id)
                .ok_or_else(|| Error::Parse {
                    path: rttm.clone(),
                    line: 0,
                    msg: format!("no entries for recording {id}"),
                })?;
            let (audio, sample_rate) = read_wav(wav)?;
            Ok(Recording {
                id,
                audio,
                sample_rate,
                reference,
            })
        })
        .collect()
}

fn diarize_recordings(
    recs: &[Recording],
    cfg: &ExperimentConfig,
    model: &ScoreModel,
) -> Result<Vec<Timeline>> {
    let wpe = cfg.wpe.unwrap_or(model.wpe);
    recs.iter()
        .map(|r| {
            let mut dcfg = cfg.diarize;
            if cfg.oracle_speakers {
                dcfg.cluster = ClusterMode::KnownCount(r.reference.labels().len().max(1));
            }
            let d = diarize_detailed(&r.audio, r.sample_rate, &r.reference, &dcfg, &wpe, model)?;
            info!("{}: {} windows, {} labels", r.id, d.windows.len(), d.timeline.labels().len());
            Ok(d.timeline)
        })
        .collect()
}

/// Writes `<out>/<id>.rttm` per recording and returns the hypotheses.
pub fn cmd_diarize(args: &ExperimentArgs, random: bool) -> Result<Vec<Timeline>> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply(args);
    let model = ScoreModel::load(&cfg.model)?;
    let recs = load_recordings(&cfg)?;
    let hyps = diarize_recordings(&recs, &cfg, &model)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    for h in &hyps {
        write_rttm(&cfg.out_dir.join(format!("{}.rttm", h.recording_id)), std::slice::from_ref(h))?;
    }
    if random {
        let dir = cfg.out_dir.join("random");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let wpe = cfg.wpe.unwrap_or(model.wpe);
        for (i, r) in recs.iter().enumerate() {
            let min_len = min_window_seconds(&model.stft, &wpe, r.sample_rate);
            let windows = segment_windows(&r.reference, &cfg.diarize, min_len)?;
            let n_spk = r.reference.labels().len().max(1);
            let tl = random_baseline(&r.id, &windows, n_spk, cfg.seed.wrapping_add(i as u64))?;
            write_rttm(&dir.join(format!("{}.rttm", r.id)), &[tl])?;
        }
    }
    Ok(hyps)
}

fn load_timelines(path: &Path) -> Result<Vec<Timeline>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "rttm"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(read_rttm(&f)?);
        }
        Ok(out)
    } else {
        read_rttm(path)
    }
}

/// Per-recording DER, in reference order. Recordings without a hypothesis
/// are scored against an empty one.
pub fn evaluate(
    references: &[Timeline],
    hypotheses: &[Timeline],
    chunk_len: Option<f64>,
) -> Result<Vec<(String, DerBreakdown)>> {
    references
        .iter()
        .map(|r| {
            let h = hypotheses
                .iter()
                .find(|h| h.recording_id == r.recording_id)
                .cloned()
                .unwrap_or_else(|| Timeline::new(r.recording_id.clone()));
            let b = match chunk_len {
                Some(c) => der_chunked(r, &h, c)?,
                None => der(r, &h)?,
            };
            Ok((r.recording_id.clone(), b))
        })
        .collect()
}

pub fn format_der_table(rows: &[(String, DerBreakdown)]) -> String {
    let mut out = format!(
        "{:<24} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
        "recording", "miss", "fa", "conf", "speech", "DER%"
    );
    let mut total = DerBreakdown::default();
    for (id, b) in rows {
        let _ = writeln!(
            out,
            "{:<24} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8.2}",
            id, b.miss, b.false_alarm, b.confusion, b.total_speech, 100.0 * b.der
        );
        total += *b;
    }
    let _ = writeln!(
        out,
        "{:<24} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8.2}",
        "ALL", total.miss, total.false_alarm, total.confusion, total.total_speech, 100.0 * total.der
    );
    out
}

pub fn cmd_eval(
    reference: &Path,
    hyp: &Path,
    chunk_len: Option<f64>,
    out: Option<&Path>,
) -> Result<Vec<(String, DerBreakdown)>> {
    let refs = load_timelines(reference)?;
    let hyps = load_timelines(hyp)?;
    let rows = evaluate(&refs, &hyps, chunk_len)?;
    print!("{}", format_der_table(&rows));
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_der_csv(&dir.join("der.csv"), &rows)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub window: f64,
    pub shift: f64,
    /// Pooled DER over all recordings; `None` when shift exceeds window.
    pub der: Option<f64>,
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("window,shift,der\n");
    for c in cells {
        let der = c.der.map_or("NA".to_string(), |d| format!("{d:.6}"));
        let _ = writeln!(out, "{},{},{}", c.window, c.shift, der);
    }
    out
}

pub fn cmd_sweep(args: &ExperimentArgs, windows: &[f64], shifts: &[f64]) -> Result<Vec<SweepCell>> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply(args);
    let model = ScoreModel::load(&cfg.model)?;
    let recs = load_recordings(&cfg)?;
    let refs: Vec<Timeline> = recs.iter().map(|r| r.reference.clone()).collect();
    let mut cells = Vec::new();
    for &shift in shifts {
        for &window in windows {
            if shift > window {
                cells.push(SweepCell { window, shift, der: None });
                continue;
            }
            let mut c = cfg.clone();
            c.diarize.window = window;
            c.diarize.shift = shift;
            let hyps = diarize_recordings(&recs, &c, &model)?;
            let mut total = DerBreakdown::default();
            for (_, b) in evaluate(&refs, &hyps, c.diarize.chunk_len)? {
                total += b;
            }
            info!("window {window} shift {shift}: DER {:.2}%", 100.0 * total.der);
            cells.push(SweepCell { window, shift, der: Some(total.der) });
        }
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("sweep.csv");
    fs::write(&path, sweep_csv(&cells)).map_err(|e| Error::io(&path, e))?;
    Ok(cells)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let (wav, rttm) = cmd_simulate(&config, &out, seed)?;
            println!("{}\n{}", wav.display(), rttm.display());
        }
        Command::Train { config, out, seed } => {
            let m = cmd_train(&config, &out, seed)?;
            println!(
                "sigma2_same {:.6} sigma2_diff {:.6} kappa_same {:.3} lda_w [{:.4}, {:.4}] lda_b {:.4}",
                m.sigma2_same, m.sigma2_diff, m.kappa_same, m.lda_w[0], m.lda_w[1], m.lda_b
            );
        }
        Command::Diarize { exp, random_baseline } => {
            for h in cmd_diarize(&exp, random_baseline)? {
                println!("{}: {} speakers", h.recording_id, h.labels().len());
            }
        }
        Command::Eval { reference, hyp, chunk_len, out } => {
            cmd_eval(&reference, &hyp, chunk_len, out.as_deref())?;
        }
        Command::Sweep { exp, windows, shifts } => {
            print!("{}", sweep_csv(&cmd_sweep(&exp, &windows, &shifts)?));
        }
    }
    Ok(())
}

/// Parses `args` and runs, mapping outcomes to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
