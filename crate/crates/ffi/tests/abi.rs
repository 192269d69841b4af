use std::ffi::{CStr, CString};
use std::fs;
use std::process::Command;
use std::ptr;

use tempfile::TempDir;

use wpeloc::diarizer::{diarize, ClusterMode, DiarizeConfig};
use wpeloc::pairscore::{pair_features, ScoreModel};
use wpeloc::roomsim::{render_scene, synthetic_speech, RoomSpec, SceneMode, SceneSource};
use wpeloc::spectral::stft;
use wpeloc::wpe::estimate_wpe;
use wpeloc_ffi::*;

const FS: u32 = 16_000;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(wpeloc_last_error()) }.to_string_lossy().into_owned()
}

fn saved_model(dir: &TempDir) -> (ScoreModel, *mut WpelocModel) {
    let model = ScoreModel::with_params(0.05, 1.0, 30.0, 256);
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { wpeloc_model_load(cstr(&path).as_ptr(), &mut handle) };
    assert_eq!(status, WpelocStatus::Ok, "{}", last_error());
    (model, handle)
}

/// Two talkers, two turns each; samples already rounded through f32.
fn scene() -> (Vec<f32>, wpeloc::timeline::Timeline) {
    let (a, b) = ([1.2, 1.0, 1.6], [5.0, 4.2, 1.3]);
    let sources: Vec<SceneSource> = (0..4)
        .map(|i| SceneSource {
            signal: synthetic_speech(5.0, FS, 40 + i),
            position: if i % 2 == 0 { a } else { b },
            label: if i % 2 == 0 { "A" } else { "B" }.into(),
            onset: 0.0,
        })
        .collect();
    let room = RoomSpec::with_rt60([6.0, 5.0, 3.0], 0.5, FS);
    let (audio, reference) = render_scene("ffi", &sources, &room, [3.3, 2.3, 1.5], SceneMode::Concat, None).unwrap();
    (audio.iter().map(|&v| v as f32).collect(), reference)
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

#[test]
fn pair_score_matches_library() {
    let dir = TempDir::new().unwrap();
    let (model, handle) = saved_model(&dir);
    let (audio, reference) = scene();
    let seg = |k: usize| {
        let s = &reference.entries[k];
        &audio[(s.start * FS as f64) as usize..(s.end * FS as f64) as usize]
    };

    let mut filters = [ptr::null_mut(), ptr::null_mut()];
    for (k, f) in filters.iter_mut().enumerate() {
        let x = seg(k);
        let status = unsafe { wpeloc_filter_from_samples(handle, x.as_ptr(), x.len(), FS, f) };
        assert_eq!(status, WpelocStatus::Ok, "{}", last_error());
    }
    let mut out = WpelocPairFeatures::default();
    let status = unsafe { wpeloc_pair_score(handle, filters[0], filters[1], &mut out) };
    assert_eq!(status, WpelocStatus::Ok);
    assert!(last_error().is_empty());

    let lib: Vec<_> = (0..2)
        .map(|k| {
            let spec = stft(&widen(seg(k)), model.stft, FS).unwrap();
            estimate_wpe(&spec, &model.wpe).unwrap().filter
        })
        .collect();
    let expected = pair_features(&lib[0], &lib[1], &model).unwrap();
    assert_eq!(out.fused, expected.fused);
    assert_eq!(out.log_alpha, expected.log_alpha);
    assert_eq!(out.delay_bin, expected.delay_bin);
    assert_eq!(out.llr_mag, expected.llr_mag);
    assert_eq!(out.llr_delay, expected.llr_delay);

    unsafe {
        wpeloc_filter_free(filters[0]);
        wpeloc_filter_free(filters[1]);
        wpeloc_model_free(handle);
    }
}

#[test]
fn diarize_matches_library_and_writes_rttm() {
    let dir = TempDir::new().unwrap();
    let (model, handle) = saved_model(&dir);
    let (audio, reference) = scene();
    let regions = reference.speech_regions();
    let starts: Vec<f64> = regions.iter().map(|r| r.0).collect();
    let ends: Vec<f64> = regions.iter().map(|r| r.1).collect();
    let opts = WpelocDiarizeOptions {
        window: 4.0,
        shift: 1.0,
        num_speakers: 2,
        threshold: 0.0,
        chunk_len: 0.0,
    };
    let id = CString::new("ffi").unwrap();
    let mut tl = ptr::null_mut();
    let status = unsafe {
        wpeloc_diarize(
            handle,
            id.as_ptr(),
            audio.as_ptr(),
            audio.len(),
            FS,
            starts.as_ptr(),
            ends.as_ptr(),
            starts.len(),
            &opts,
            &mut tl,
        )
    };
    assert_eq!(status, WpelocStatus::Ok, "{}", last_error());

    let mut speech = wpeloc::timeline::Timeline::new("ffi");
    for r in &regions {
        speech.push("speech", r.0, r.1);
    }
    let cfg = DiarizeConfig {
        window: 4.0,
        shift: 1.0,
        cluster: ClusterMode::KnownCount(2),
        chunk_len: None,
    };
    let expected = diarize(&widen(&audio), FS, &speech, &cfg, &model.wpe, &model).unwrap();

    let n = unsafe { wpeloc_timeline_len(tl) };
    assert_eq!(n, expected.entries.len());
    for (i, seg) in expected.entries.iter().enumerate() {
        let (mut s, mut e, mut label) = (0.0, 0.0, ptr::null());
        let status = unsafe { wpeloc_timeline_segment(tl, i, &mut s, &mut e, &mut label) };
        assert_eq!(status, WpelocStatus::Ok);
        assert_eq!((s, e), (seg.start, seg.end));
        assert_eq!(unsafe { CStr::from_ptr(label) }.to_str().unwrap(), seg.label);
    }
    let (mut s, mut e, mut label) = (0.0, 0.0, ptr::null());
    let status = unsafe { wpeloc_timeline_segment(tl, n, &mut s, &mut e, &mut label) };
    assert_eq!(status, WpelocStatus::InvalidArgument);

    // Round trip through RTTM and score against the reference.
    let hyp = dir.path().join("hyp.rttm");
    let refp = dir.path().join("ref.rttm");
    wpeloc::timeline::write_rttm(&refp, std::slice::from_ref(&reference)).unwrap();
    assert_eq!(unsafe { wpeloc_timeline_write_rttm(tl, cstr(&hyp).as_ptr()) }, WpelocStatus::Ok);
    let mut der = WpelocDer::default();
    let status = unsafe { wpeloc_der_files(cstr(&refp).as_ptr(), cstr(&hyp).as_ptr(), 0.0, &mut der) };
    assert_eq!(status, WpelocStatus::Ok, "{}", last_error());
    let read = |p: &std::path::Path| wpeloc::timeline::read_rttm(p).unwrap().remove(0);
    let direct = wpeloc::metrics::der(&read(&refp), &read(&hyp)).unwrap();
    assert!((der.der - direct.der).abs() < 1e-12);
    assert!((der.total_speech - direct.total_speech).abs() < 1e-9);

    unsafe {
        wpeloc_timeline_free(tl);
        wpeloc_model_free(handle);
    }
}

#[test]
fn der_files_hand_case() {
    let dir = TempDir::new().unwrap();
    let r = dir.path().join("r.rttm");
    let h = dir.path().join("h.rttm");
    fs::write(
        &r,
        "SPEAKER x 1 0.0 5.0 <NA> <NA> A <NA> <NA>\nSPEAKER x 1 5.0 5.0 <NA> <NA> B <NA> <NA>\n",
    )
    .unwrap();
    fs::write(&h, "SPEAKER x 1 0.0 10.0 <NA> <NA> s <NA> <NA>\n").unwrap();
    let mut der = WpelocDer::default();
    let status = unsafe { wpeloc_der_files(cstr(&r).as_ptr(), cstr(&h).as_ptr(), 0.0, &mut der) };
    assert_eq!(status, WpelocStatus::Ok);
    assert!((der.der - 0.5).abs() < 1e-12);
    assert!((der.confusion - 5.0).abs() < 1e-9);
    assert_eq!(der.miss + der.false_alarm, 0.0);
}

#[test]
fn errors_are_reported_not_raised() {
    let dir = TempDir::new().unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { wpeloc_model_load(ptr::null(), &mut model) }, WpelocStatus::NullPointer);
    assert!(last_error().contains("path"));

    let missing = cstr(&dir.path().join("missing.json"));
    assert_eq!(unsafe { wpeloc_model_load(missing.as_ptr(), &mut model) }, WpelocStatus::Io);
    assert!(model.is_null());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{").unwrap();
    assert_eq!(unsafe { wpeloc_model_load(cstr(&bad).as_ptr(), &mut model) }, WpelocStatus::Data);

    let (_, handle) = saved_model(&dir);
    let mut filter = ptr::null_mut();
    let short = [0.1f32; 100];
    let status = unsafe { wpeloc_filter_from_samples(handle, short.as_ptr(), short.len(), FS, &mut filter) };
    assert_eq!(status, WpelocStatus::Data);
    assert!(filter.is_null());
    assert!(!last_error().is_empty());

    let mut out = WpelocPairFeatures::default();
    assert_eq!(
        unsafe { wpeloc_pair_score(handle, ptr::null(), ptr::null(), &mut out) },
        WpelocStatus::NullPointer
    );
    assert_eq!(unsafe { wpeloc_timeline_len(ptr::null()) }, 0);

    unsafe {
        wpeloc_model_free(handle);
        wpeloc_model_free(ptr::null_mut());
        wpeloc_filter_free(ptr::null_mut());
        wpeloc_timeline_free(ptr::null_mut());
    }
    let name = unsafe { CStr::from_ptr(wpeloc_status_name(WpelocStatus::Io)) };
    assert_eq!(name.to_str().unwrap(), "i/o error");
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/wpeloc.h");
    let text = fs::read_to_string(header).unwrap();
    for f in ["wpeloc_model_load", "wpeloc_pair_score", "wpeloc_diarize", "wpeloc_der_files", "wpeloc_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("use.c");
    fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ WpelocModel *m = 0; return wpeloc_model_load(\"x\", &m) == WPELOC_STATUS_OK; }}\n"
        ),
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
        .expect("a C compiler on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
