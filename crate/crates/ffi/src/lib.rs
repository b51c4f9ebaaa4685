//! C ABI over `psg4d-core`.
//!
//! Every function returns a [`Psg4dStatus`]; results come back through out
//! parameters. On failure a message is available from
//! [`psg4d_last_error`] until the next call on the same thread. Handles are
//! opaque and must be released with their `_free` function. Strings returned
//! to the caller are freed with [`psg4d_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use psg4d_core::inference::{
    parse_stage, run_pipeline, InferenceConfig, InferenceTranscript, MockBackend, SceneDescriptor, StageOutput,
};
use psg4d_core::io::{load_document, parse_document, AnnotationDocument};
use psg4d_core::mask::{tube_iou, MaskTube};
use psg4d_core::metrics::{recall_at_k, EvalSample, MatchConfig};
use psg4d_core::model::SceneGraph4D;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Psg4dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed document, config or argument.
    InvalidInput = 3,
    Io = 4,
    /// The text backend failed.
    Backend = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// A loaded scene graph with its document metadata.
pub struct Psg4dScene {
    doc: AnnotationDocument,
    ranked: SceneGraph4D,
    plain: SceneGraph4D,
}

/// Accumulates prediction/gold pairs and scores them.
pub struct Psg4dEvaluator {
    cfg: MatchConfig,
    samples: Vec<EvalSample>,
}

/// Result of one chained-inference run.
pub struct Psg4dTranscript {
    inner: InferenceTranscript,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(Psg4dStatus, String);

type FfiResult = Result<(), Fail>;

fn fail(status: Psg4dStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `f`, recording any failure or panic.
fn guard(f: impl FnOnce() -> FfiResult) -> Psg4dStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Psg4dStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            Psg4dStatus::Internal
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(Psg4dStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(Psg4dStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or valid for reads of a `T`.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(Psg4dStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(Psg4dStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn scene_from_doc(doc: AnnotationDocument) -> Result<Psg4dScene, Fail> {
    let bad = |(field, message): (String, String)| fail(Psg4dStatus::InvalidInput, format!("{field}: {message}"));
    let plain = doc.to_scene().map_err(bad)?;
    let ranked = doc.to_ranked_scene().map_err(bad)?;
    Ok(Psg4dScene { doc, ranked, plain })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NUL bytes removed").into_raw()
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next call.
#[no_mangle]
pub extern "C" fn psg4d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn psg4d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psg4d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads an annotation document from a file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_scene_load(path: *const c_char, out: *mut *mut Psg4dScene) -> Psg4dStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let path = text(path, "path")?;
        let doc = load_document(Path::new(path)).map_err(|e| {
            let status = if e.is_input_error() { Psg4dStatus::InvalidInput } else { Psg4dStatus::Io };
            fail(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(scene_from_doc(doc)?));
        Ok(())
    })
}

/// Parses an annotation document from JSON text.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_scene_from_json(json: *const c_char, out: *mut *mut Psg4dScene) -> Psg4dStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let json = text(json, "json")?;
        let doc =
            parse_document(json, Path::new("<memory>")).map_err(|e| fail(Psg4dStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(scene_from_doc(doc)?));
        Ok(())
    })
}

/// # Safety
/// `scene` is a live handle; `objects` and `relations` are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_scene_counts(
    scene: *const Psg4dScene,
    objects: *mut usize,
    relations: *mut usize,
) -> Psg4dStatus {
    guard(|| {
        out_ptr(objects, "objects")?;
        out_ptr(relations, "relations")?;
        let s = handle(scene, "scene")?;
        *objects = s.plain.objects.len();
        *relations = s.plain.relations.len();
        Ok(())
    })
}

/// # Safety
/// `scene` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psg4d_scene_free(scene: *mut Psg4dScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Creates an evaluator. `ks` must be strictly ascending and positive.
///
/// # Safety
/// `ks` is valid for `n_ks` reads; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_evaluator_new(
    viou_threshold: f64,
    temporal_iou_threshold: f64,
    grounded: bool,
    ks: *const usize,
    n_ks: usize,
    out: *mut *mut Psg4dEvaluator,
) -> Psg4dStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if ks.is_null() && n_ks > 0 {
            return Err(fail(Psg4dStatus::NullPointer, "ks is null"));
        }
        let ks = if n_ks == 0 { Vec::new() } else { std::slice::from_raw_parts(ks, n_ks).to_vec() };
        let cfg = MatchConfig { viou_threshold, temporal_iou_threshold, ks, grounded };
        cfg.validate().map_err(|e| fail(Psg4dStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(Psg4dEvaluator { cfg, samples: Vec::new() }));
        Ok(())
    })
}

/// Adds one video. Prediction relations are ranked by confidence. Both
/// scenes are copied.
///
/// # Safety
/// All handles are live.
#[no_mangle]
pub unsafe extern "C" fn psg4d_evaluator_add(
    ev: *mut Psg4dEvaluator,
    pred: *const Psg4dScene,
    gold: *const Psg4dScene,
) -> Psg4dStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or_else(|| fail(Psg4dStatus::NullPointer, "evaluator is null"))?;
        let (pred, gold) = (handle(pred, "pred")?, handle(gold, "gold")?);
        ev.samples.push(EvalSample {
            video_id: gold.doc.video_id.clone(),
            pred: pred.ranked.clone(),
            gold: gold.plain.clone(),
        });
        Ok(())
    })
}

/// R@k and mR@k in percent over the videos added so far. `k` must be one
/// of the configured cutoffs.
///
/// # Safety
/// `ev` is live; `recall` and `mean_recall` are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_evaluator_recall(
    ev: *const Psg4dEvaluator,
    k: usize,
    recall: *mut f64,
    mean_recall: *mut f64,
) -> Psg4dStatus {
    guard(|| {
        out_ptr(recall, "recall")?;
        out_ptr(mean_recall, "mean_recall")?;
        let ev = handle(ev, "evaluator")?;
        if !ev.cfg.ks.contains(&k) {
            return Err(fail(Psg4dStatus::InvalidInput, format!("k={k} is not among {:?}", ev.cfg.ks)));
        }
        let report = recall_at_k(&ev.samples, &ev.cfg).map_err(|e| fail(Psg4dStatus::InvalidInput, e.to_string()))?;
        *recall = report.recall[&k];
        *mean_recall = report.mean_recall[&k];
        Ok(())
    })
}

/// # Safety
/// `ev` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psg4d_evaluator_free(ev: *mut Psg4dEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

/// Volumetric IoU of two dense row-major `frames x height x width` masks
/// (nonzero bytes are foreground).
///
/// # Safety
/// `a` and `b` are valid for `frames * height * width` reads; `out` is
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_tube_iou(
    frames: usize,
    height: usize,
    width: usize,
    a: *const u8,
    b: *const u8,
    out: *mut f64,
) -> Psg4dStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if a.is_null() || b.is_null() {
            return Err(fail(Psg4dStatus::NullPointer, "mask is null"));
        }
        let n = frames
            .checked_mul(height)
            .and_then(|x| x.checked_mul(width))
            .ok_or_else(|| fail(Psg4dStatus::InvalidInput, "volume size overflows"))?;
        let tube = |p: *const u8| {
            let v: Vec<bool> = std::slice::from_raw_parts(p, n).iter().map(|&x| x != 0).collect();
            MaskTube::from_dense(frames, height, width, &v).map_err(|e| fail(Psg4dStatus::InvalidInput, e.to_string()))
        };
        *out = tube_iou(&tube(a)?, &tube(b)?).map_err(|e| fail(Psg4dStatus::InvalidInput, e.to_string()))?;
        Ok(())
    })
}

/// Parses one stage output (1..=4) and returns `{"items": .., "warnings": ..}`
/// as JSON. Never fails on malformed text.
///
/// # Safety
/// `input` is a NUL-terminated string; `out_json` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_parse_stage(stage: u8, input: *const c_char, out_json: *mut *mut c_char) -> Psg4dStatus {
    guard(|| {
        out_ptr(out_json, "out_json")?;
        let input = text(input, "input")?;
        let (items, warnings) =
            parse_stage(stage, input).map_err(|e| fail(Psg4dStatus::InvalidInput, e.to_string()))?;
        let items = match items {
            StageOutput::Objects(v) => serde_json::to_value(v),
            StageOutput::Pairs(v) => serde_json::to_value(v),
            StageOutput::Triplets(v) => serde_json::to_value(v),
            StageOutput::Quintuples(v) => serde_json::to_value(v),
        }
        .map_err(|e| fail(Psg4dStatus::Internal, e.to_string()))?;
        *out_json = into_c_string(serde_json::json!({ "items": items, "warnings": warnings }).to_string());
        Ok(())
    })
}

/// Runs chained inference against scripted responses, one per request.
///
/// # Safety
/// `video_id` is a NUL-terminated string; `responses` is valid for
/// `n_responses` reads of NUL-terminated strings; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_infer_mock(
    video_id: *const c_char,
    duration: f64,
    responses: *const *const c_char,
    n_responses: usize,
    examples: usize,
    out: *mut *mut Psg4dTranscript,
) -> Psg4dStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let id = text(video_id, "video_id")?;
        if responses.is_null() && n_responses > 0 {
            return Err(fail(Psg4dStatus::NullPointer, "responses is null"));
        }
        let mut script = Vec::with_capacity(n_responses);
        for i in 0..n_responses {
            script.push(text(*responses.add(i), "response")?.to_string());
        }
        let cfg = InferenceConfig { examples, ..InferenceConfig::default() };
        let t =
            run_pipeline(&SceneDescriptor::new(id, duration), &MockBackend::new(script), &cfg, None).map_err(|e| {
                let status = if e.partial().is_some() { Psg4dStatus::Backend } else { Psg4dStatus::InvalidInput };
                fail(status, e.to_string())
            })?;
        *out = Box::into_raw(Box::new(Psg4dTranscript { inner: t }));
        Ok(())
    })
}

/// Number of validated final quintuples.
///
/// # Safety
/// `t` is live; `count` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_transcript_quintuples(t: *const Psg4dTranscript, count: *mut usize) -> Psg4dStatus {
    guard(|| {
        out_ptr(count, "count")?;
        *count = handle(t, "transcript")?.inner.final_output.len();
        Ok(())
    })
}

/// The transcript as JSON; free with [`psg4d_string_free`].
///
/// # Safety
/// `t` is live; `out_json` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn psg4d_transcript_to_json(
    t: *const Psg4dTranscript,
    out_json: *mut *mut c_char,
) -> Psg4dStatus {
    guard(|| {
        out_ptr(out_json, "out_json")?;
        let t = handle(t, "transcript")?;
        let json = serde_json::to_string(&t.inner).map_err(|e| fail(Psg4dStatus::Internal, e.to_string()))?;
        *out_json = into_c_string(json);
        Ok(())
    })
}

/// # Safety
/// `t` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psg4d_transcript_free(t: *mut Psg4dTranscript) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
