//! C interface to checkpoint loading, segmentation and mask metrics.
//!
//! Every function returns a [`TwmStatus`]. On failure a message is kept per
//! thread and can be read with [`twm_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use topowmamba::eval::{case_metrics, EmptyFlag, LabelMask};
use topowmamba::network::{load_checkpoint, Model};
use topowmamba::pipeline::{preprocess_slice, resize_nearest};
use topowmamba::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed or corrupt checkpoint.
    Format = 4,
    Shape = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// `flag` values of [`TwmClassMetrics`].
pub const TWM_FLAG_NONE: u32 = 0;
pub const TWM_FLAG_BOTH_EMPTY: u32 = 1;
pub const TWM_FLAG_PRED_EMPTY: u32 = 2;
pub const TWM_FLAG_GT_EMPTY: u32 = 3;

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TwmModelInfo {
    pub in_channels: u32,
    pub num_classes: u32,
    pub height: u32,
    pub width: u32,
    pub num_params: u64,
}

/// Metrics of one foreground class. Dice and IoU in percent, HD95 in mm.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TwmClassMetrics {
    pub class_id: u32,
    pub dice: f64,
    pub iou: f64,
    pub hd95: f64,
    pub support: u64,
    pub flag: u32,
}

/// Opaque model handle.
pub struct TwmModel {
    model: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TwmStatus {
    match e {
        Error::Io { .. } => TwmStatus::Io,
        Error::Format(_) | Error::ConfigMismatch(_) => TwmStatus::Format,
        Error::Shape { .. } => TwmStatus::Shape,
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => TwmStatus::NonFinite,
        Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::Data(_) => TwmStatus::InvalidArgument,
        _ => TwmStatus::Internal,
    }
}

struct Fail(TwmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TwmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TwmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TwmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TwmStatus::Internal
        }
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn twm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn twm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a handle to release with
/// [`twm_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn twm_model_load(path: *const c_char, out: *mut *mut TwmModel) -> TwmStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(|_| Fail(TwmStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ckpt = load_checkpoint(path)?;
        *out = Box::into_raw(Box::new(TwmModel { model: ckpt.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`twm_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn twm_model_free(model: *mut TwmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `info` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn twm_model_info(model: *const TwmModel, info: *mut TwmModelInfo) -> TwmStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        let c = &m.config;
        *info = TwmModelInfo {
            in_channels: c.in_channels as u32,
            num_classes: c.num_classes as u32,
            height: c.input_size[0] as u32,
            width: c.input_size[1] as u32,
            num_params: m.num_params() as u64,
        };
        Ok(())
    })
}

/// Segments one grayscale slice of any size. The slice is min-max normalised
/// and resized to the model input; the class mask is resized back and written
/// to `mask` (`height * width` bytes).
///
/// # Safety
/// `model` must be a live handle, `image` must hold `height * width` floats
/// and `mask` must have room for `mask_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn twm_model_segment(
    model: *const TwmModel,
    image: *const f32,
    height: usize,
    width: usize,
    mask: *mut u8,
    mask_len: usize,
) -> TwmStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if image.is_null() {
            return Err(null("image"));
        }
        if mask.is_null() {
            return Err(null("mask"));
        }
        if height == 0 || width == 0 {
            return Err(Fail(TwmStatus::InvalidArgument, format!("empty image {height}x{width}")));
        }
        if m.config.in_channels != 1 {
            return Err(Fail(TwmStatus::InvalidArgument, format!("model expects {} channels", m.config.in_channels)));
        }
        let n = height.checked_mul(width).ok_or_else(|| Fail(TwmStatus::InvalidArgument, "image size overflows".into()))?;
        if mask_len < n {
            return Err(Fail(TwmStatus::BufferTooSmall, format!("mask buffer holds {mask_len} bytes, need {n}")));
        }
        let pixels = std::slice::from_raw_parts(image, n);
        let [mh, mw] = m.config.input_size;
        let x = preprocess_slice(pixels, height, width, (mh, mw), None)?;
        let x = Tensor::new(&[1, 1, mh, mw], x.into_data())?;
        let classes = m.segment(&x)?.remove(0);
        let out = resize_nearest(&classes, mh, mw, height, width);
        std::slice::from_raw_parts_mut(mask, n).copy_from_slice(&out);
        Ok(())
    })
}

/// Dice, IoU and HD95 for every foreground class `1..num_classes`. Writes
/// `num_classes - 1` records to `out`.
///
/// # Safety
/// `pred` and `gt` must hold `height * width` bytes; `out` must have room for
/// `out_len` records.
#[no_mangle]
pub unsafe extern "C" fn twm_mask_metrics(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    num_classes: u32,
    spacing_row_mm: f64,
    spacing_col_mm: f64,
    out: *mut TwmClassMetrics,
    out_len: usize,
) -> TwmStatus {
    guard(|| {
        if pred.is_null() {
            return Err(null("pred"));
        }
        if gt.is_null() {
            return Err(null("gt"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let k = num_classes as usize;
        if !(2..=256).contains(&k) {
            return Err(Fail(TwmStatus::InvalidArgument, format!("num_classes {k} outside 2..=256")));
        }
        if out_len < k - 1 {
            return Err(Fail(TwmStatus::BufferTooSmall, format!("room for {out_len} records, need {}", k - 1)));
        }
        let n = height.checked_mul(width).ok_or_else(|| Fail(TwmStatus::InvalidArgument, "mask size overflows".into()))?;
        let spacing = (spacing_row_mm, spacing_col_mm);
        let p = LabelMask::with_spacing(height, width, std::slice::from_raw_parts(pred, n).to_vec(), spacing)?;
        let g = LabelMask::with_spacing(height, width, std::slice::from_raw_parts(gt, n).to_vec(), spacing)?;
        let rows = case_metrics("", &p, &g, k)?;
        let out = std::slice::from_raw_parts_mut(out, k - 1);
        for (o, r) in out.iter_mut().zip(&rows) {
            *o = TwmClassMetrics {
                class_id: r.class as u32,
                dice: r.dice,
                iou: r.iou,
                hd95: r.hd95,
                support: r.support as u64,
                flag: match r.flag {
                    None => TWM_FLAG_NONE,
                    Some(EmptyFlag::BothEmpty) => TWM_FLAG_BOTH_EMPTY,
                    Some(EmptyFlag::PredEmpty) => TWM_FLAG_PRED_EMPTY,
                    Some(EmptyFlag::GtEmpty) => TWM_FLAG_GT_EMPTY,
                },
            };
        }
        Ok(())
    })
}
