//! C ABI over the lesionseg pipeline.
//!
//! Every fallible call returns an [`LsStatus`]; on failure the message is
//! kept per thread and read back with [`ls_last_error_message`]. Pipelines
//! are opaque handles created by [`ls_pipeline_open`] and released with
//! [`ls_pipeline_close`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lesionseg::detector::{iou, nms, BBox};
use lesionseg::metrics::compute_metrics;
use lesionseg::pipeline::{Pipeline, PipelineConfig};
use lesionseg::tensor::Tensor;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Model = 5,
    Panic = 6,
}

/// Axis-aligned box in pixels, `[x1, x2) × [y1, y2)`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub score: f32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsMetrics {
    pub accuracy: f64,
    pub dice: f64,
    pub jaccard: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Loaded detector and segmentor.
pub struct LsPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let s = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn fail(status: LsStatus, msg: impl std::fmt::Display) -> LsStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into `LsStatus::Panic`.
fn guard(f: impl FnOnce() -> LsStatus) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LsStatus::Panic, msg)
        }
    }
}

fn model_error(e: lesionseg::Error) -> LsStatus {
    let status = match e {
        lesionseg::Error::Io(_) | lesionseg::Error::Dataset { .. } => LsStatus::Io,
        lesionseg::Error::Config(_) | lesionseg::Error::Json(_) => LsStatus::InvalidArgument,
        _ => LsStatus::Model,
    };
    fail(status, e)
}

impl From<LsBox> for BBox {
    fn from(b: LsBox) -> Self {
        BBox::new(b.x1, b.y1, b.x2, b.y2).with_score(b.score)
    }
}

impl From<BBox> for LsBox {
    fn from(b: BBox) -> Self {
        LsBox { x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2, score: b.score.unwrap_or(0.0) }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or "" if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads the pipeline described by a JSON config file.
#[no_mangle]
pub unsafe extern "C" fn ls_pipeline_open(config_path: *const c_char, out: *mut *mut LsPipeline) -> LsStatus {
    guard(|| {
        if config_path.is_null() || out.is_null() {
            return fail(LsStatus::NullPointer, "null argument to ls_pipeline_open");
        }
        *out = std::ptr::null_mut();
        let Ok(path) = CStr::from_ptr(config_path).to_str() else {
            return fail(LsStatus::InvalidArgument, "config path is not UTF-8");
        };
        match PipelineConfig::from_file(Path::new(path)).and_then(Pipeline::load) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(LsPipeline { inner }));
                LsStatus::Ok
            }
            Err(e) => model_error(e),
        }
    })
}

/// Segments an interleaved RGB8 image of `width × height` pixels into
/// `mask_out`, one byte per pixel (0 or 255). `mask_len` must be at least
/// `width * height`.
#[no_mangle]
pub unsafe extern "C" fn ls_pipeline_segment(
    pipeline: *const LsPipeline,
    rgb: *const u8,
    width: usize,
    height: usize,
    mask_out: *mut u8,
    mask_len: usize,
) -> LsStatus {
    guard(|| {
        if pipeline.is_null() || rgb.is_null() || mask_out.is_null() {
            return fail(LsStatus::NullPointer, "null argument to ls_pipeline_segment");
        }
        let Some(n) = width.checked_mul(height).filter(|&n| n > 0) else {
            return fail(LsStatus::InvalidArgument, format!("bad image size {width}x{height}"));
        };
        if mask_len < n {
            return fail(LsStatus::BufferTooSmall, format!("mask buffer holds {mask_len} bytes, need {n}"));
        }
        let src = std::slice::from_raw_parts(rgb, 3 * n);
        let mut planar = vec![0.0f32; 3 * n];
        for (i, px) in src.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * n + i] = f32::from(px[c]) / 255.0;
            }
        }
        let seg = Tensor::new(&[3, height, width], planar).and_then(|img| (*pipeline).inner.segment_image(&img));
        match seg {
            Ok(seg) => {
                let out = std::slice::from_raw_parts_mut(mask_out, n);
                for (o, &v) in out.iter_mut().zip(seg.mask.data()) {
                    *o = if v >= 0.5 { 255 } else { 0 };
                }
                LsStatus::Ok
            }
            Err(e) => model_error(e),
        }
    })
}

/// Frees a pipeline; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ls_pipeline_close(pipeline: *mut LsPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Intersection over union of two boxes; 0 if either pointer is null.
#[no_mangle]
pub unsafe extern "C" fn ls_iou(a: *const LsBox, b: *const LsBox) -> f32 {
    if a.is_null() || b.is_null() {
        return 0.0;
    }
    iou(&(*a).into(), &(*b).into())
}

/// Greedy non-maximum suppression. Survivors are written to `kept` in
/// descending score order and their count to `kept_count`; `kept` must have
/// room for `count` boxes.
#[no_mangle]
pub unsafe extern "C" fn ls_nms(
    boxes: *const LsBox,
    count: usize,
    threshold: f32,
    kept: *mut LsBox,
    kept_count: *mut usize,
) -> LsStatus {
    guard(|| {
        if kept_count.is_null() || (count > 0 && (boxes.is_null() || kept.is_null())) {
            return fail(LsStatus::NullPointer, "null argument to ls_nms");
        }
        if !(0.0..=1.0).contains(&threshold) {
            return fail(LsStatus::InvalidArgument, format!("NMS threshold {threshold} outside [0, 1]"));
        }
        let input: Vec<BBox> =
            if count == 0 { Vec::new() } else { std::slice::from_raw_parts(boxes, count).iter().map(|&b| b.into()).collect() };
        let survivors = nms(&input, threshold);
        for (i, b) in survivors.iter().enumerate() {
            *kept.add(i) = (*b).into();
        }
        *kept_count = survivors.len();
        LsStatus::Ok
    })
}

/// Pixel metrics of a predicted mask against the ground truth; both are
/// `len` bytes, nonzero meaning lesion.
#[no_mangle]
pub unsafe extern "C" fn ls_metrics(pred: *const u8, gt: *const u8, len: usize, out: *mut LsMetrics) -> LsStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() || out.is_null() {
            return fail(LsStatus::NullPointer, "null argument to ls_metrics");
        }
        if len == 0 {
            return fail(LsStatus::InvalidArgument, "empty masks");
        }
        let as_tensor = |p: *const u8| {
            let v = std::slice::from_raw_parts(p, len).iter().map(|&x| f32::from(u8::from(x != 0))).collect();
            Tensor::new(&[1, 1, len], v)
        };
        match as_tensor(pred).and_then(|p| compute_metrics(&p, &as_tensor(gt)?)) {
            Ok(m) => {
                *out = LsMetrics {
                    accuracy: m.accuracy,
                    dice: m.dice,
                    jaccard: m.jaccard,
                    sensitivity: m.sensitivity,
                    specificity: m.specificity,
                };
                LsStatus::Ok
            }
            Err(e) => model_error(e),
        }
    })
}
