//! C ABI over the `aquifer` pipeline.
//!
//! Images and models are opaque handles created by `aq_*_load` and released
//! with the matching `aq_*_free`. Every fallible function returns an
//! [`AqStatus`]; on failure, [`aq_last_error_message`] describes the error
//! for the calling thread. Panics are caught at the boundary and reported as
//! [`AqStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use aquifer::estimation::{expected_areas_raw, water_consumption, ConsumptionRates, PixelGeometry};
use aquifer::evaluation::{auc, evaluate_at, optimal_threshold};
use aquifer::features::{assemble_spec, FeatureSpec};
use aquifer::learners::{load_model, TrainedModel};
use aquifer::raster_io::{load_annotations, load_image, MultibandImage};
use aquifer::rasterize::{rasterize_annotations, rasterize_stage2};
use aquifer::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Validation = 5,
    Shape = 6,
    Config = 7,
    DegenerateLabels = 8,
    Diverged = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Opaque multiband image.
pub struct AqImage(MultibandImage);

/// Opaque trained model.
pub struct AqModel(TrainedModel);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AqMetrics {
    pub pixel_jaccard: f64,
    pub pos_accuracy: f64,
    pub neg_accuracy: f64,
    pub balanced_accuracy: f64,
    pub auc: f64,
    pub threshold: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AqConsumption {
    pub residential_gal_per_day: f64,
    pub nonresidential_gal_per_day: f64,
    pub total_gal_per_day: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(AqStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => AqStatus::Io,
            Error::Format { .. } | Error::SizeMismatch { .. } | Error::NonFinite { .. } => {
                AqStatus::Format
            }
            Error::Validation(_) | Error::Congestion { .. } => AqStatus::Validation,
            Error::Config(_) => AqStatus::Config,
            Error::Shape { .. } => AqStatus::Shape,
            Error::DegenerateLabels(_) => AqStatus::DegenerateLabels,
            Error::Diverged { .. } => AqStatus::Diverged,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AqStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AqStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AqStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(AqStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize) -> Result<&'a mut [T], Fail> {
    if len < needed {
        return Err(Fail(
            AqStatus::BufferTooSmall,
            format!("buffer holds {len} values, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null("output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

fn truth_bools(truth: &[u8]) -> Vec<bool> {
    truth.iter().map(|&t| t != 0).collect()
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aq_image_load(path: *const c_char, out: *mut *mut AqImage) -> AqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let img = load_image(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AqImage(img)));
        Ok(())
    })
}

/// # Safety
/// `image` must come from [`aq_image_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn aq_image_free(image: *mut AqImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Writes width, height and band count. Any output pointer may be null.
///
/// # Safety
/// `image` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn aq_image_shape(
    image: *const AqImage,
    width: *mut usize,
    height: *mut usize,
    bands: *mut usize,
) -> AqStatus {
    guard(|| {
        let img = &image.as_ref().ok_or_else(|| null("image"))?.0;
        for (p, v) in [
            (width, img.width()),
            (height, img.height()),
            (bands, img.bands()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aq_model_load(path: *const c_char, out: *mut *mut AqModel) -> AqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = load_model(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AqModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`aq_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn aq_model_free(model: *mut AqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aq_model_feature_dim(model: *const AqModel, out: *mut usize) -> AqStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        *out_arg(out, "out")? = m.feature_dim;
        Ok(())
    })
}

/// Per-pixel probabilities, row-major, into `out` (at least
/// `width * height` values). A negative `k` uses the frame width recorded in
/// the model.
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn aq_model_predict(
    model: *const AqModel,
    image: *const AqImage,
    k: i64,
    out: *mut f64,
    out_len: usize,
) -> AqStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let img = &image.as_ref().ok_or_else(|| null("image"))?.0;
        let spec = match (m.features, k) {
            (Some(s), k) if k < 0 => s,
            (None, k) if k < 0 => {
                return Err(Fail(
                    AqStatus::InvalidArgument,
                    "the model records no feature layout; pass k >= 0".into(),
                ))
            }
            (recorded, k) => FeatureSpec::new(k as usize, recorded.and_then(|s| s.hog)),
        };
        let dst = out_slice(out, out_len, img.pixel_count())?;
        let x = assemble_spec(img, &spec)?;
        let probs = m.predict_proba(&x)?;
        dst.copy_from_slice(&probs);
        Ok(())
    })
}

/// Rasterizes an annotation file into `out` (`width * height` bytes): a
/// binary building mask, or the residential 128 / non-residential 255
/// palette when `stage2` is non-zero.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must hold `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn aq_rasterize(
    path: *const c_char,
    width: usize,
    height: usize,
    stage2: i32,
    out: *mut u8,
    out_len: usize,
) -> AqStatus {
    guard(|| {
        let ann = load_annotations(path_arg(path, "path")?)?;
        let dst = out_slice(out, out_len, width.saturating_mul(height))?;
        let mask = if stage2 != 0 {
            rasterize_stage2(&ann, width, height)?
        } else {
            rasterize_annotations(&ann, width, height, None)?
        };
        dst.copy_from_slice(mask.values());
        Ok(())
    })
}

/// Metrics of `probs >= threshold` against `truth` (non-zero = positive).
///
/// # Safety
/// `probs` and `truth` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aq_metrics(
    probs: *const f64,
    truth: *const u8,
    n: usize,
    threshold: f64,
    out: *mut AqMetrics,
) -> AqStatus {
    guard(|| {
        let p = slice_arg(probs, n, "probs")?;
        let t = truth_bools(slice_arg(truth, n, "truth")?);
        let out = out_arg(out, "out")?;
        let r = evaluate_at(p, &t, threshold)?;
        *out = AqMetrics {
            pixel_jaccard: r.pixel_jaccard,
            pos_accuracy: r.pos_accuracy,
            neg_accuracy: r.neg_accuracy,
            balanced_accuracy: r.balanced_accuracy,
            auc: r.auc,
            threshold: r.threshold,
            tp: r.confusion.tp,
            tn: r.confusion.tn,
            fp: r.confusion.fp,
            fn_: r.confusion.fn_,
        };
        Ok(())
    })
}

/// # Safety
/// `probs` and `truth` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aq_auc(
    probs: *const f64,
    truth: *const u8,
    n: usize,
    out: *mut f64,
) -> AqStatus {
    guard(|| {
        let p = slice_arg(probs, n, "probs")?;
        let t = truth_bools(slice_arg(truth, n, "truth")?);
        *out_arg(out, "out")? = auc(p, &t)?;
        Ok(())
    })
}

/// Threshold maximizing pixel Jaccard, and the Jaccard it reaches.
///
/// # Safety
/// `probs` and `truth` must hold `n` values; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn aq_optimal_threshold(
    probs: *const f64,
    truth: *const u8,
    n: usize,
    out_threshold: *mut f64,
    out_jaccard: *mut f64,
) -> AqStatus {
    guard(|| {
        let p = slice_arg(probs, n, "probs")?;
        let t = truth_bools(slice_arg(truth, n, "truth")?);
        let (th, pj) = optimal_threshold(p, &t)?;
        *out_arg(out_threshold, "out_threshold")? = th;
        *out_arg(out_jaccard, "out_jaccard")? = pj;
        Ok(())
    })
}

/// Expected residential and non-residential areas in m².
///
/// # Safety
/// Both probability arrays must hold `n` values; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn aq_expected_areas(
    p_building: *const f64,
    p_residential: *const f64,
    n: usize,
    pixel_area_m2: f64,
    out_residential_m2: *mut f64,
    out_nonresidential_m2: *mut f64,
) -> AqStatus {
    guard(|| {
        let b = slice_arg(p_building, n, "p_building")?;
        let r = slice_arg(p_residential, n, "p_residential")?;
        let a = expected_areas_raw(b, r, PixelGeometry { pixel_area_m2 })?;
        *out_arg(out_residential_m2, "out_residential_m2")? = a.residential_m2;
        *out_arg(out_nonresidential_m2, "out_nonresidential_m2")? = a.nonresidential_m2;
        Ok(())
    })
}

/// Daily consumption from floor areas in m² and per-person rates.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aq_water_consumption(
    area_residential_m2: f64,
    area_nonresidential_m2: f64,
    w_r_gal_per_person_day: f64,
    w_nr_gal_per_person_day: f64,
    occupancy_ft2_per_person: f64,
    out: *mut AqConsumption,
) -> AqStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let rates = ConsumptionRates {
            w_r_gal_per_person_day,
            w_nr_gal_per_person_day,
            occupancy_ft2_per_person,
        };
        let r = water_consumption(area_residential_m2, area_nonresidential_m2, &rates)?;
        *out = AqConsumption {
            residential_gal_per_day: r.residential_share_gal,
            nonresidential_gal_per_day: r.nonresidential_share_gal,
            total_gal_per_day: r.water_gal_per_day,
        };
        Ok(())
    })
}
