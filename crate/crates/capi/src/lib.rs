//! C ABI over `wavepolyp`.
//!
//! Every fallible function returns a [`WpStatus`]. On failure the message is
//! kept per thread and can be read with [`wp_last_error`]. Objects cross the
//! boundary as opaque handles that must be released with their `_free`
//! function. Images are row-major, interleaved RGB in `[0, 1]`; masks hold
//! one byte per pixel, 0 or 1.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use wavepolyp::contrast::{analyze_pair, contrast_index, BinaryMask, ContrastReport, Modality, RgbImage};
use wavepolyp::data::{dice, iou};
use wavepolyp::model::{batch_images, AblationMode, ModelConfig, SegModel};
use wavepolyp::wavelet::{dwt2, idwt2, Band, Matrix2D, SubbandSet};
use wavepolyp::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NonFinite = 4,
    Io = 5,
    Checkpoint = 6,
    Topology = 7,
    Panic = 8,
}

/// Sub-band selector for [`wp_report_ci`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpBand {
    Ll = 0,
    Hl = 1,
    Lh = 2,
    Hh = 3,
}

/// Channel selector for [`wp_report_ci`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpModality {
    Gray = 0,
    R = 1,
    G = 2,
    B = 3,
    RgbMean = 4,
}

/// Opaque segmentation model.
pub struct WpModel(SegModel);

/// Opaque contrast report.
pub struct WpReport(ContrastReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WpStatus {
    match e {
        Error::Dimension(_) | Error::Shape(_) => WpStatus::Dimension,
        Error::NonFinite { .. } | Error::Diverged { .. } => WpStatus::NonFinite,
        Error::Io(_) | Error::Image(_) | Error::PathNotFound(_) | Error::NoSamples(_) | Error::MissingMask { .. } => {
            WpStatus::Io
        }
        Error::Checkpoint(_) | Error::Json(_) => WpStatus::Checkpoint,
        Error::Topology(_) => WpStatus::Topology,
        Error::InvalidArgument(_) | Error::DegenerateMask { .. } => WpStatus::InvalidArgument,
    }
}

struct Fail(WpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(WpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            WpStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            WpStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(WpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn mask(p: *const u8, rows: usize, cols: usize, what: &str) -> Result<BinaryMask, Fail> {
    Ok(BinaryMask::new(rows, cols, slice(p, rows * cols, what)?.to_vec())?)
}

unsafe fn image(p: *const f64, rows: usize, cols: usize) -> Result<RgbImage, Fail> {
    Ok(RgbImage::from_interleaved(rows, cols, slice(p, rows * cols * 3, "rgb")?)?)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn wp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn wp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// One level of the orthonormal Haar transform of a `rows × cols` matrix.
/// Each output buffer holds `rows/2 × cols/2` values.
#[no_mangle]
pub unsafe extern "C" fn wp_haar_dwt2(
    input: *const f64,
    rows: usize,
    cols: usize,
    ll: *mut f64,
    hl: *mut f64,
    lh: *mut f64,
    hh: *mut f64,
) -> WpStatus {
    guard(|| {
        let m = Matrix2D::new(rows, cols, slice(input, rows * cols, "input")?.to_vec())?;
        let s = dwt2(&m)?;
        let n = (rows / 2) * (cols / 2);
        for (p, band, what) in [(ll, &s.ll, "ll"), (hl, &s.hl, "hl"), (lh, &s.lh, "lh"), (hh, &s.hh, "hh")] {
            slice_mut(p, n, what)?.copy_from_slice(band.as_slice());
        }
        Ok(())
    })
}

/// Inverse of [`wp_haar_dwt2`]; `rows` and `cols` are the sub-band sizes and
/// `output` holds `2·rows × 2·cols` values.
#[no_mangle]
pub unsafe extern "C" fn wp_haar_idwt2(
    ll: *const f64,
    hl: *const f64,
    lh: *const f64,
    hh: *const f64,
    rows: usize,
    cols: usize,
    output: *mut f64,
) -> WpStatus {
    guard(|| {
        let n = rows * cols;
        let band = |p: *const f64, what: &str| -> Result<Matrix2D, Fail> {
            Ok(Matrix2D::new(rows, cols, slice(p, n, what)?.to_vec())?)
        };
        let s = SubbandSet {
            ll: band(ll, "ll")?,
            hl: band(hl, "hl")?,
            lh: band(lh, "lh")?,
            hh: band(hh, "hh")?,
        };
        let out = idwt2(&s)?;
        slice_mut(output, 4 * n, "output")?.copy_from_slice(out.as_slice());
        Ok(())
    })
}

/// Contrast index of `coeffs` under `mask`.
#[no_mangle]
pub unsafe extern "C" fn wp_contrast_index(
    coeffs: *const f64,
    mask_bits: *const u8,
    rows: usize,
    cols: usize,
    epsilon: f64,
    out: *mut f64,
) -> WpStatus {
    guard(|| {
        let c = Matrix2D::new(rows, cols, slice(coeffs, rows * cols, "coeffs")?.to_vec())?;
        let m = mask(mask_bits, rows, cols, "mask")?;
        let v = contrast_index(&c, &m, epsilon)?;
        slice_mut(out, 1, "out")?[0] = v;
        Ok(())
    })
}

unsafe fn overlap_metric(
    pred: *const u8,
    gt: *const u8,
    rows: usize,
    cols: usize,
    out: *mut f64,
    f: fn(&BinaryMask, &BinaryMask) -> wavepolyp::Result<f64>,
) -> WpStatus {
    guard(|| {
        let v = f(&mask(pred, rows, cols, "pred")?, &mask(gt, rows, cols, "gt")?)?;
        slice_mut(out, 1, "out")?[0] = v;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wp_dice(pred: *const u8, gt: *const u8, rows: usize, cols: usize, out: *mut f64) -> WpStatus {
    overlap_metric(pred, gt, rows, cols, out, dice)
}

#[no_mangle]
pub unsafe extern "C" fn wp_iou(pred: *const u8, gt: *const u8, rows: usize, cols: usize, out: *mut f64) -> WpStatus {
    overlap_metric(pred, gt, rows, cols, out, iou)
}

/// Contrast report of one image and mask over `levels` decomposition levels.
#[no_mangle]
pub unsafe extern "C" fn wp_analyze_pair(
    rgb: *const f64,
    mask_bits: *const u8,
    rows: usize,
    cols: usize,
    levels: usize,
    epsilon: f64,
    out: *mut *mut WpReport,
) -> WpStatus {
    guard(|| {
        let out = slice_mut(out, 1, "out")?;
        let report = analyze_pair(&image(rgb, rows, cols)?, &mask(mask_bits, rows, cols, "mask")?, levels, epsilon)?;
        out[0] = Box::into_raw(Box::new(WpReport(report)));
        Ok(())
    })
}

/// One contrast value of a report. `band` is a [`WpBand`] and `modality` a
/// [`WpModality`]; the LL band exists only at the deepest level.
#[no_mangle]
pub unsafe extern "C" fn wp_report_ci(
    report: *const WpReport,
    level: usize,
    band: u32,
    modality: u32,
    out: *mut f64,
) -> WpStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let band = *Band::ALL
            .get(band as usize)
            .ok_or_else(|| Fail(WpStatus::InvalidArgument, format!("band {band} out of range")))?;
        let modality = *Modality::ALL
            .get(modality as usize)
            .ok_or_else(|| Fail(WpStatus::InvalidArgument, format!("modality {modality} out of range")))?;
        let v = r.0.ci(level, band, modality).ok_or_else(|| {
            Fail(
                WpStatus::InvalidArgument,
                format!("report has no entry for level {level} {band:?} {}", modality.as_str()),
            )
        })?;
        slice_mut(out, 1, "out")?[0] = v;
        Ok(())
    })
}

/// The report as CSV. Release the string with [`wp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn wp_report_csv(report: *const WpReport, out: *mut *mut c_char) -> WpStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let out = slice_mut(out, 1, "out")?;
        out[0] = CString::new(r.0.to_csv()).expect("csv has no nul").into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wp_report_free(report: *mut WpReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

#[no_mangle]
pub unsafe extern "C" fn wp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Freshly initialised model with the default topology. `mode` is one of
/// `full`, `rgb_only`, `add_fusion`, `no_cdf`.
#[no_mangle]
pub unsafe extern "C" fn wp_model_new(mode: *const c_char, seed: u64, out: *mut *mut WpModel) -> WpStatus {
    guard(|| {
        let out = slice_mut(out, 1, "out")?;
        let mode: AblationMode = string(mode, "mode")?.parse()?;
        let m = SegModel::new(ModelConfig::default().with_mode(mode), seed)?;
        out[0] = Box::into_raw(Box::new(WpModel(m)));
        Ok(())
    })
}

/// Model from a checkpoint written by `wavepolyp train` or [`wp_model_save`].
#[no_mangle]
pub unsafe extern "C" fn wp_model_load(path: *const c_char, out: *mut *mut WpModel) -> WpStatus {
    guard(|| {
        let out = slice_mut(out, 1, "out")?;
        let m = SegModel::load(&PathBuf::from(string(path, "path")?), None)?;
        out[0] = Box::into_raw(Box::new(WpModel(m)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wp_model_save(model: *const WpModel, path: *const c_char) -> WpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        m.0.save(&PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

/// Number of scalar parameters, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn wp_model_param_count(model: *const WpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// Side lengths accepted by [`wp_model_predict`] must be multiples of this;
/// 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn wp_model_size_divisor(model: *const WpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().size_divisor())
}

/// Polyp probability per pixel, written to `probs` (`rows × cols` values).
#[no_mangle]
pub unsafe extern "C" fn wp_model_predict(
    model: *const WpModel,
    rgb: *const f64,
    rows: usize,
    cols: usize,
    probs: *mut f64,
) -> WpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let img = image(rgb, rows, cols)?;
        let p = m.0.predict(&batch_images(&[&img])?)?;
        slice_mut(probs, rows * cols, "probs")?.copy_from_slice(p.data());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn wp_model_free(model: *mut WpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
