//! C ABI over the hurovision core.
//!
//! Every fallible call returns an [`HvStatus`]. On failure the message is kept
//! per thread and can be read with [`hv_last_error`]. Stateful objects are
//! opaque handles created by `hv_*_new` and released by the matching
//! `hv_*_free`. Boxes are pixel corners `(x1, y1, x2, y2)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hurovision::bridge::{decode, encode, DetectionMessage};
use hurovision::evaluation::{evaluate, EvalConfig, GtBox, ImageEval, PredBox};
use hurovision::geometric::{detect_all, GeoProfile};
use hurovision::postprocess::{iou, nms, NmsConfig};
use hurovision::preprocess::{letterbox_box, letterbox_params, unletterbox_box, Image, LetterboxParams};
use hurovision::scheduling::{LoadStrategy, Schedule};
use hurovision::{ClassMap, Detection, DetectionSet, Error, Event, FrameMeta, PixelBox};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGeometry = 3,
    Parse = 4,
    Validation = 5,
    ClockSkew = 6,
    NoData = 7,
    Config = 8,
    Io = 9,
    BufferTooSmall = 10,
    Internal = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvEvent {
    Basketball = 0,
    Archery = 1,
    Marathon = 2,
}

impl From<HvEvent> for Event {
    fn from(e: HvEvent) -> Self {
        match e {
            HvEvent::Basketball => Event::Basketball,
            HvEvent::Archery => Event::Archery,
            HvEvent::Marathon => Event::Marathon,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvDetection {
    pub class_id: u32,
    pub confidence: f64,
    pub bbox: HvBox,
}

/// Normalized center-size box as carried on the wire.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvNormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvWireDetection {
    pub class_id: u32,
    pub confidence: f64,
    pub bbox: HvNormBox,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvLetterbox {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub src_w: u32,
    pub src_h: u32,
    pub dst: u32,
}

/// Undefined metrics are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvSummary {
    pub images: u64,
    pub ground_truths: u64,
    pub predictions: u64,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
}

/// Decoded detection message.
pub struct HvMessage(DetectionMessage);

/// Frame skipper combined with an optional rate cap.
pub struct HvSchedule(Schedule);

/// Color-segmentation detector bound to one event profile.
pub struct HvGeoDetector(GeoProfile);

/// Accumulates images and scores them on demand.
pub struct HvEvaluator {
    classes: ClassMap,
    cfg: EvalConfig,
    images: Vec<ImageEval>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HvStatus {
    match e {
        Error::InvalidArgument(_) | Error::UndefinedAp(_) | Error::AmbiguousShape(_) => HvStatus::InvalidArgument,
        Error::InvalidGeometry(_) => HvStatus::InvalidGeometry,
        Error::Parse(_) | Error::Load { .. } | Error::Image(_) => HvStatus::Parse,
        Error::Validation { .. } => HvStatus::Validation,
        Error::ClockSkew { .. } => HvStatus::ClockSkew,
        Error::NoData(_) => HvStatus::NoData,
        Error::Config(_) => HvStatus::Config,
        Error::Io(_) => HvStatus::Io,
        _ => HvStatus::Internal,
    }
}

struct Fail(HvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HvStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and turns panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HvStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            HvStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Copies `items` into a caller buffer of `cap` entries. `out_len` always
/// receives the full count; a short buffer fails with `BufferTooSmall`.
unsafe fn fill<T: Copy>(items: &[T], buf: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    *out(out_len, "out_len")? = items.len();
    if items.len() > cap {
        return Err(Fail(
            HvStatus::BufferTooSmall,
            format!("{} entries do not fit in {cap}", items.len()),
        ));
    }
    if !items.is_empty() {
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(items.as_ptr(), buf, items.len());
    }
    Ok(())
}

fn pixel_box(b: &HvBox) -> Result<PixelBox, Fail> {
    Ok(PixelBox::new(b.x1, b.y1, b.x2, b.y2)?)
}

fn hv_box(b: &PixelBox) -> HvBox {
    HvBox {
        x1: b.x1(),
        y1: b.y1(),
        x2: b.x2(),
        y2: b.y2(),
    }
}

fn params(p: &HvLetterbox) -> LetterboxParams {
    LetterboxParams {
        scale: p.scale,
        pad_x: p.pad_x,
        pad_y: p.pad_y,
        src_w: p.src_w,
        src_h: p.src_h,
        dst: p.dst,
    }
}

fn hv_detection(d: &Detection) -> HvDetection {
    HvDetection {
        class_id: d.class_id,
        confidence: d.confidence(),
        bbox: hv_box(&d.bbox),
    }
}

fn or_nan(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `out_params` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_letterbox_params(src_w: u32, src_h: u32, dst: u32, out_params: *mut HvLetterbox) -> HvStatus {
    guard(|| {
        let p = letterbox_params(src_w, src_h, dst)?;
        *out(out_params, "out_params")? = HvLetterbox {
            scale: p.scale,
            pad_x: p.pad_x,
            pad_y: p.pad_y,
            src_w: p.src_w,
            src_h: p.src_h,
            dst: p.dst,
        };
        Ok(())
    })
}

/// Maps a source-frame box onto the model plane.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hv_letterbox_box(p: *const HvLetterbox, b: *const HvBox, out_box: *mut HvBox) -> HvStatus {
    guard(|| {
        let m = letterbox_box(&pixel_box(handle(b, "box")?)?, &params(handle(p, "params")?))?;
        *out(out_box, "out_box")? = hv_box(&m);
        Ok(())
    })
}

/// Maps a model-plane box back to the source frame, clamped to it.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hv_unletterbox_box(p: *const HvLetterbox, b: *const HvBox, out_box: *mut HvBox) -> HvStatus {
    guard(|| {
        let m = unletterbox_box(&pixel_box(handle(b, "box")?)?, &params(handle(p, "params")?))?;
        *out(out_box, "out_box")? = hv_box(&m);
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hv_iou(a: *const HvBox, b: *const HvBox, out_iou: *mut f64) -> HvStatus {
    guard(|| {
        let (a, b) = (pixel_box(handle(a, "a")?)?, pixel_box(handle(b, "b")?)?);
        *out(out_iou, "out_iou")? = iou(&a, &b);
        Ok(())
    })
}

/// Greedy NMS. Writes the indices of the kept detections, highest
/// confidence first, into `out_indices` (room for `n` entries suffices).
/// Boxes must have non-negative coordinates.
///
/// # Safety
/// `dets` must hold `n` entries and `out_indices` `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn hv_nms(
    dets: *const HvDetection,
    n: usize,
    iou_threshold: f64,
    per_class: bool,
    out_indices: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> HvStatus {
    guard(|| {
        let dets = slice(dets, n, "dets")?;
        let cfg = NmsConfig::new(iou_threshold, 0.0, per_class)?;
        // the label carries the input index through suppression
        let mut w = 1.0f64;
        let mut h = 1.0f64;
        let mut items = Vec::with_capacity(n);
        for (i, d) in dets.iter().enumerate() {
            let b = pixel_box(&d.bbox)?;
            w = w.max(b.x2().ceil());
            h = h.max(b.y2().ceil());
            items.push(Detection::new(d.class_id, i.to_string(), d.confidence, b, 0)?);
        }
        if w > u32::MAX as f64 || h > u32::MAX as f64 {
            return Err(Fail(HvStatus::InvalidGeometry, "box coordinates too large".into()));
        }
        let set = DetectionSet::new(FrameMeta::new(0, 0.0, w as u32, h as u32)?, items)?;
        let kept: Vec<usize> = nms(set, &cfg)
            .detections()
            .iter()
            .map(|d| d.label.parse().expect("index label"))
            .collect();
        fill(&kept, out_indices, cap, out_len)
    })
}

/// Parses one JSON message.
///
/// # Safety
/// `json` must hold `len` bytes; `out_msg` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_message_decode(json: *const u8, len: usize, out_msg: *mut *mut HvMessage) -> HvStatus {
    guard(|| {
        let bytes = slice(json, len, "json")?;
        let out_msg = out(out_msg, "out_msg")?;
        *out_msg = Box::into_raw(Box::new(HvMessage(decode(bytes)?)));
        Ok(())
    })
}

/// Builds a message from normalized detections.
///
/// # Safety
/// `dets` must hold `n` entries; `labels` must hold `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hv_message_new(
    frame_id: u64,
    timestamp: f64,
    frame_w: u32,
    frame_h: u32,
    dets: *const HvWireDetection,
    labels: *const *const c_char,
    n: usize,
    out_msg: *mut *mut HvMessage,
) -> HvStatus {
    guard(|| {
        let dets = slice(dets, n, "dets")?;
        let labels = slice(labels, n, "labels")?;
        let mut wire = Vec::with_capacity(n);
        for (d, &l) in dets.iter().zip(labels) {
            if l.is_null() {
                return Err(null("label"));
            }
            let label = CStr::from_ptr(l)
                .to_str()
                .map_err(|_| Fail(HvStatus::InvalidArgument, "label is not UTF-8".into()))?;
            let b = hurovision::NormBox::new(d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h)?;
            wire.push(hurovision::bridge::WireDetection::new(d.class_id, label, d.confidence, b)?);
        }
        let m = DetectionMessage::new(frame_id, timestamp, frame_w, frame_h, wire)?;
        *out(out_msg, "out_msg")? = Box::into_raw(Box::new(HvMessage(m)));
        Ok(())
    })
}

/// Writes the JSON text without a terminating NUL. `out_len` receives the
/// required size even when `cap` is too small.
///
/// # Safety
/// `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn hv_message_encode(msg: *const HvMessage, buf: *mut u8, cap: usize, out_len: *mut usize) -> HvStatus {
    guard(|| {
        let text = encode(&handle(msg, "msg")?.0);
        fill(text.as_bytes(), buf, cap, out_len)
    })
}

/// # Safety
/// `msg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hv_message_frame_id(msg: *const HvMessage) -> u64 {
    msg.as_ref().map_or(0, |m| m.0.frame_id())
}

/// # Safety
/// `msg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hv_message_timestamp(msg: *const HvMessage) -> f64 {
    msg.as_ref().map_or(f64::NAN, |m| m.0.timestamp())
}

/// # Safety
/// `msg` must come from this library; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_message_frame_size(msg: *const HvMessage, out_w: *mut u32, out_h: *mut u32) -> HvStatus {
    guard(|| {
        let m = &handle(msg, "msg")?.0;
        *out(out_w, "out_w")? = m.frame_w();
        *out(out_h, "out_h")? = m.frame_h();
        Ok(())
    })
}

/// # Safety
/// `msg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hv_message_len(msg: *const HvMessage) -> usize {
    msg.as_ref().map_or(0, |m| m.0.detections().len())
}

/// Detection `i` of the message.
///
/// # Safety
/// `msg` must come from this library; `out_det` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_message_get(msg: *const HvMessage, i: usize, out_det: *mut HvWireDetection) -> HvStatus {
    guard(|| {
        let m = &handle(msg, "msg")?.0;
        let d = m.detections().get(i).ok_or_else(|| {
            Fail(HvStatus::InvalidArgument, format!("index {i} out of {}", m.detections().len()))
        })?;
        let b = d.bbox();
        *out(out_det, "out_det")? = HvWireDetection {
            class_id: d.class_id(),
            confidence: d.confidence(),
            bbox: HvNormBox {
                cx: b.cx(),
                cy: b.cy(),
                w: b.w(),
                h: b.h(),
            },
        };
        Ok(())
    })
}

/// Copies the label of detection `i`, without a terminating NUL.
///
/// # Safety
/// `msg` must come from this library; `out_label` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn hv_message_label(msg: *const HvMessage, i: usize, out_label: *mut u8, cap: usize, out_len: *mut usize) -> HvStatus {
    guard(|| {
        let m = &handle(msg, "msg")?.0;
        let d = m.detections().get(i).ok_or_else(|| {
            Fail(HvStatus::InvalidArgument, format!("index {i} out of {}", m.detections().len()))
        })?;
        fill(d.label().as_bytes(), out_label, cap, out_len)
    })
}

/// # Safety
/// `msg` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn hv_message_free(msg: *mut HvMessage) {
    if !msg.is_null() {
        drop(Box::from_raw(msg));
    }
}

/// Admits every `skip`th frame, then at most `rate_cap` per second.
/// A `rate_cap` of zero or less disables the cap.
///
/// # Safety
/// `out_schedule` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_schedule_new(skip: u64, rate_cap: f64, out_schedule: *mut *mut HvSchedule) -> HvStatus {
    guard(|| {
        let cap = (rate_cap > 0.0).then_some(rate_cap);
        let s = Schedule::new(skip, cap)?;
        *out(out_schedule, "out_schedule")? = Box::into_raw(Box::new(HvSchedule(s)));
        Ok(())
    })
}

/// Decides whether frame `frame_index` seen at `now` seconds is processed.
///
/// # Safety
/// `s` must come from this library; `out_admit` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_schedule_admit(s: *mut HvSchedule, frame_index: u64, now: f64, out_admit: *mut bool) -> HvStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| null("schedule"))?;
        let admit = s.0.admit(frame_index, now)?;
        *out(out_admit, "out_admit")? = admit;
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hv_schedule_free(s: *mut HvSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Detector with the built-in profile of `event`.
///
/// # Safety
/// `out_detector` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_geo_new(event: HvEvent, out_detector: *mut *mut HvGeoDetector) -> HvStatus {
    guard(|| {
        let d = HvGeoDetector(GeoProfile::builtin(event.into()));
        *out(out_detector, "out_detector")? = Box::into_raw(Box::new(d));
        Ok(())
    })
}

/// Detector with a profile given as TOML text.
///
/// # Safety
/// `toml` must be NUL-terminated; `out_detector` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_geo_from_profile(toml: *const c_char, out_detector: *mut *mut HvGeoDetector) -> HvStatus {
    guard(|| {
        let text = CStr::from_ptr(handle(toml, "toml")?)
            .to_str()
            .map_err(|_| Fail(HvStatus::Parse, "profile is not UTF-8".into()))?;
        let d = HvGeoDetector(GeoProfile::parse(text)?);
        *out(out_detector, "out_detector")? = Box::into_raw(Box::new(d));
        Ok(())
    })
}

/// Runs the detector on a packed RGB8 frame of `width * height * 3` bytes.
///
/// # Safety
/// `rgb` must hold the frame and `out_dets` `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn hv_geo_detect(
    d: *const HvGeoDetector,
    rgb: *const u8,
    width: u32,
    height: u32,
    out_dets: *mut HvDetection,
    cap: usize,
    out_len: *mut usize,
) -> HvStatus {
    guard(|| {
        let d = handle(d, "detector")?;
        let n = (width as usize)
            .checked_mul(height as usize)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| Fail(HvStatus::InvalidGeometry, "frame too large".into()))?;
        let img = Image::new(width, height, slice(rgb, n, "rgb")?.to_vec())?;
        let dets: Vec<HvDetection> = detect_all(&img, &d.0, 0).iter().map(hv_detection).collect();
        fill(&dets, out_dets, cap, out_len)
    })
}

/// Number of classes the detector reports.
///
/// # Safety
/// `d` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hv_geo_num_classes(d: *const HvGeoDetector) -> usize {
    d.as_ref().map_or(0, |d| d.0.class_map().len())
}

/// # Safety
/// `d` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hv_geo_free(d: *mut HvGeoDetector) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Evaluator over `num_classes` classes. Precision and recall count
/// predictions scoring above `conf_threshold` that match at `iou_threshold`.
///
/// # Safety
/// `out_evaluator` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_evaluator_new(
    num_classes: u32,
    iou_threshold: f64,
    conf_threshold: f64,
    out_evaluator: *mut *mut HvEvaluator,
) -> HvStatus {
    guard(|| {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) || !(0.0..1.0).contains(&conf_threshold) {
            return Err(Fail(
                HvStatus::InvalidArgument,
                format!("thresholds iou={iou_threshold} conf={conf_threshold}"),
            ));
        }
        let classes = ClassMap::new((0..num_classes).map(|c| format!("class{c}")))?;
        let e = HvEvaluator {
            classes,
            cfg: EvalConfig {
                iou_t: iou_threshold,
                conf_t: conf_threshold,
            },
            images: Vec::new(),
        };
        *out(out_evaluator, "out_evaluator")? = Box::into_raw(Box::new(e));
        Ok(())
    })
}

/// Adds one image: its ground-truth boxes and its predictions.
///
/// # Safety
/// `gts` must hold `n_gts` entries and `preds` `n_preds`.
#[no_mangle]
pub unsafe extern "C" fn hv_evaluator_add_image(
    e: *mut HvEvaluator,
    gt_classes: *const u32,
    gts: *const HvBox,
    n_gts: usize,
    preds: *const HvDetection,
    n_preds: usize,
) -> HvStatus {
    guard(|| {
        let e = e.as_mut().ok_or_else(|| null("evaluator"))?;
        let k = e.classes.len() as u32;
        let check = |c: u32| {
            if c < k {
                Ok(())
            } else {
                Err(Fail(HvStatus::InvalidArgument, format!("class {c} not below {k}")))
            }
        };
        let mut img = ImageEval::default();
        for (&c, b) in slice(gt_classes, n_gts, "gt_classes")?.iter().zip(slice(gts, n_gts, "gts")?) {
            check(c)?;
            img.gts.push(GtBox {
                class_id: c,
                bbox: pixel_box(b)?,
            });
        }
        for p in slice(preds, n_preds, "preds")? {
            check(p.class_id)?;
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(Fail(HvStatus::InvalidArgument, format!("confidence {}", p.confidence)));
            }
            img.preds.push(PredBox {
                class_id: p.class_id,
                confidence: p.confidence,
                bbox: pixel_box(&p.bbox)?,
            });
        }
        e.images.push(img);
        Ok(())
    })
}

/// Scores everything added so far.
///
/// # Safety
/// `e` must come from this library; `out_summary` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hv_evaluator_summary(e: *const HvEvaluator, out_summary: *mut HvSummary) -> HvStatus {
    guard(|| {
        let e = handle(e, "evaluator")?;
        let r = evaluate(&e.images, &e.classes, &e.cfg);
        *out(out_summary, "out_summary")? = HvSummary {
            images: r.images as u64,
            ground_truths: r.ground_truths as u64,
            predictions: r.predictions as u64,
            precision: or_nan(r.precision),
            recall: or_nan(r.recall),
            map50: or_nan(r.map50),
            map50_95: or_nan(r.map50_95),
        };
        Ok(())
    })
}

/// # Safety
/// `e` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hv_evaluator_free(e: *mut HvEvaluator) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}
