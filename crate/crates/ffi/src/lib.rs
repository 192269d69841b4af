//! C ABI for wpeloc.
//!
//! Every entry point returns a [`WpelocStatus`]; on failure the message is
//! available from [`wpeloc_last_error`] on the same thread. Handles are
//! opaque and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use wpeloc::cli::evaluate;
use wpeloc::diarizer::{diarize, ClusterMode, DiarizeConfig};
use wpeloc::metrics::DerBreakdown;
use wpeloc::pairscore::{pair_features, ScoreModel};
use wpeloc::spectral::stft;
use wpeloc::timeline::{read_rttm, write_rttm, Timeline};
use wpeloc::wpe::{estimate_wpe, WpeFilter};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpelocStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidArgument = -2,
    Io = -3,
    Data = -4,
    Panic = -5,
}

/// Trained scoring model.
pub struct WpelocModel(ScoreModel);

/// WPE filter of one audio segment.
pub struct WpelocFilter(WpeFilter);

/// Diarization output for one recording.
pub struct WpelocTimeline {
    timeline: Timeline,
    labels: Vec<CString>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WpelocPairFeatures {
    pub log_alpha: f64,
    pub delay_bin: usize,
    pub llr_mag: f64,
    pub llr_delay: f64,
    pub fused: f64,
}

/// Diarization settings. `num_speakers > 0` selects known-count clustering,
/// otherwise merging stops at `threshold`. `chunk_len <= 0` disables chunking.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WpelocDiarizeOptions {
    pub window: f64,
    pub shift: f64,
    pub num_speakers: usize,
    pub threshold: f64,
    pub chunk_len: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WpelocDer {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_speech: f64,
    pub der: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(WpelocStatus, String);

impl From<wpeloc::Error> for Failure {
    fn from(e: wpeloc::Error) -> Self {
        let status = match e {
            wpeloc::Error::Io { .. } => WpelocStatus::Io,
            wpeloc::Error::InvalidConfig(_) | wpeloc::Error::OutOfRange(_) => WpelocStatus::InvalidArgument,
            _ => WpelocStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WpelocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            WpelocStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            WpelocStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(WpelocStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(WpelocStatus::InvalidArgument, msg.into())
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn samples_arg<'a>(samples: *const f32, len: usize) -> Result<&'a [f32], Failure> {
    if samples.is_null() {
        return Err(null("samples"));
    }
    Ok(std::slice::from_raw_parts(samples, len))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn wpeloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model saved by `wpeloc train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_model_load(path: *const c_char, out: *mut *mut WpelocModel) -> WpelocStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, WpelocModel(ScoreModel::load(&path)?))
    })
}

/// # Safety
/// `model` must come from [`wpeloc_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_model_free(model: *mut WpelocModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Estimates the WPE filter of a mono segment using the model's STFT and
/// WPE settings.
///
/// # Safety
/// `samples` must point to `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_filter_from_samples(
    model: *const WpelocModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut WpelocFilter,
) -> WpelocStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let audio: Vec<f64> = samples_arg(samples, len)?.iter().map(|&v| v as f64).collect();
        let spec = stft(&audio, model.stft, sample_rate)?;
        let filter = estimate_wpe(&spec, &model.wpe)?.filter;
        put(out, WpelocFilter(filter))
    })
}

/// # Safety
/// `filter` must come from [`wpeloc_filter_from_samples`] or be null.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_filter_free(filter: *mut WpelocFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Same-location features and fused score for a pair of filters.
///
/// # Safety
/// All pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_pair_score(
    model: *const WpelocModel,
    a: *const WpelocFilter,
    b: *const WpelocFilter,
    out: *mut WpelocPairFeatures,
) -> WpelocStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let (a, b) = (&borrow(a, "a")?.0, &borrow(b, "b")?.0);
        if out.is_null() {
            return Err(null("out"));
        }
        let p = pair_features(a, b, model)?;
        *out = WpelocPairFeatures {
            log_alpha: p.log_alpha,
            delay_bin: p.delay_bin,
            llr_mag: p.llr_mag,
            llr_delay: p.llr_delay,
            fused: p.fused,
        };
        Ok(())
    })
}

/// Diarizes one recording. Speech regions are given as `n_regions` pairs of
/// `starts[i]..ends[i]` in seconds.
///
/// # Safety
/// `recording_id` must be NUL-terminated; `samples` must point to `len`
/// floats; `starts` and `ends` to `n_regions` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_diarize(
    model: *const WpelocModel,
    recording_id: *const c_char,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    starts: *const f64,
    ends: *const f64,
    n_regions: usize,
    options: *const WpelocDiarizeOptions,
    out: *mut *mut WpelocTimeline,
) -> WpelocStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let opts = borrow(options, "options")?;
        if recording_id.is_null() {
            return Err(null("recording_id"));
        }
        let id = CStr::from_ptr(recording_id)
            .to_str()
            .map_err(|_| invalid("recording_id is not UTF-8"))?;
        if n_regions > 0 && (starts.is_null() || ends.is_null()) {
            return Err(null("speech regions"));
        }
        let mut speech = Timeline::new(id);
        for i in 0..n_regions {
            speech.push("speech", *starts.add(i), *ends.add(i));
        }
        speech.validate()?;
        let audio: Vec<f64> = samples_arg(samples, len)?.iter().map(|&v| v as f64).collect();
        let cfg = DiarizeConfig {
            window: opts.window,
            shift: opts.shift,
            cluster: if opts.num_speakers > 0 {
                ClusterMode::KnownCount(opts.num_speakers)
            } else {
                ClusterMode::Threshold(opts.threshold)
            },
            chunk_len: (opts.chunk_len > 0.0).then_some(opts.chunk_len),
        };
        let timeline = diarize(&audio, sample_rate, &speech, &cfg, &model.wpe, model)?;
        let labels = timeline
            .entries
            .iter()
            .map(|s| CString::new(s.label.as_str()).map_err(|_| invalid("label contains NUL")))
            .collect::<Result<_, _>>()?;
        put(out, WpelocTimeline { timeline, labels })
    })
}

/// Number of segments in a timeline; 0 for null.
///
/// # Safety
/// `timeline` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_timeline_len(timeline: *const WpelocTimeline) -> usize {
    timeline.as_ref().map_or(0, |t| t.timeline.entries.len())
}

/// Segment `index`: times in seconds, label borrowed from the handle.
///
/// # Safety
/// `timeline` must be valid; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_timeline_segment(
    timeline: *const WpelocTimeline,
    index: usize,
    start: *mut f64,
    end: *mut f64,
    label: *mut *const c_char,
) -> WpelocStatus {
    guard(|| {
        let t = borrow(timeline, "timeline")?;
        if start.is_null() || end.is_null() || label.is_null() {
            return Err(null("output"));
        }
        let seg = t
            .timeline
            .entries
            .get(index)
            .ok_or_else(|| invalid(format!("segment {index} out of range")))?;
        *start = seg.start;
        *end = seg.end;
        *label = t.labels[index].as_ptr();
        Ok(())
    })
}

/// # Safety
/// `timeline` must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_timeline_write_rttm(
    timeline: *const WpelocTimeline,
    path: *const c_char,
) -> WpelocStatus {
    guard(|| {
        let t = borrow(timeline, "timeline")?;
        let path = path_arg(path, "path")?;
        write_rttm(&path, std::slice::from_ref(&t.timeline))?;
        Ok(())
    })
}

/// # Safety
/// `timeline` must come from [`wpeloc_diarize`] or be null.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_timeline_free(timeline: *mut WpelocTimeline) {
    if !timeline.is_null() {
        drop(Box::from_raw(timeline));
    }
}

/// DER pooled over every recording in the reference RTTM file; recordings
/// missing from the hypothesis count as all missed. `chunk_len <= 0` scores
/// whole recordings.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wpeloc_der_files(
    reference: *const c_char,
    hypothesis: *const c_char,
    chunk_len: f64,
    out: *mut WpelocDer,
) -> WpelocStatus {
    guard(|| {
        let refs = read_rttm(&path_arg(reference, "reference")?)?;
        let hyps = read_rttm(&path_arg(hypothesis, "hypothesis")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rows = evaluate(&refs, &hyps, (chunk_len > 0.0).then_some(chunk_len))?;
        let mut sum = DerBreakdown::default();
        for (_, b) in &rows {
            sum.miss += b.miss;
            sum.false_alarm += b.false_alarm;
            sum.confusion += b.confusion;
            sum.total_speech += b.total_speech;
        }
        if sum.total_speech <= 0.0 {
            return Err(Failure(WpelocStatus::Data, "reference has no speech".into()));
        }
        *out = WpelocDer {
            miss: sum.miss,
            false_alarm: sum.false_alarm,
            confusion: sum.confusion,
            total_speech: sum.total_speech,
            der: sum.error() / sum.total_speech,
        };
        Ok(())
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn wpeloc_status_name(status: WpelocStatus) -> *const c_char {
    let s: &'static CStr = match status {
        WpelocStatus::Ok => c"ok",
        WpelocStatus::NullPointer => c"null pointer",
        WpelocStatus::InvalidArgument => c"invalid argument",
        WpelocStatus::Io => c"i/o error",
        WpelocStatus::Data => c"data error",
        WpelocStatus::Panic => c"panic",
    };
    s.as_ptr()
}
