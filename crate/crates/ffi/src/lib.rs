//! C ABI for loading digit models and classifying 32×32 bitmaps.
//!
//! Every fallible call returns a [`TgocrStatus`]; on failure a message is
//! available from [`tgocr_last_error`] on the same thread. Models are opaque
//! handles created by `tgocr_model_build`/`tgocr_model_load` and released with
//! [`tgocr_model_free`]. A handle may be used from several threads at once
//! for prediction, which never mutates it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tgocr::checkpoint::{load_checkpoint, save_checkpoint};
use tgocr::data::{decode_bitmap, preprocess, IMAGE_SIDE};
use tgocr::model::build;
use tgocr::optim::AdadeltaConfig;
use tgocr::train::argmax;
use tgocr::{Architecture, Error, SequentialModel, Tensor};

/// Number of output classes.
pub const TGOCR_CLASSES: usize = 10;
/// Pixels in one preprocessed input image (32 × 32).
pub const TGOCR_IMAGE_PIXELS: usize = 1024;
pub const TGOCR_ARCH_MLP: u32 = 0;
pub const TGOCR_ARCH_CNN: u32 = 1;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TgocrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Undecodable or unsupported image.
    Image = 4,
    /// Corrupt, truncated or incompatible checkpoint.
    Checkpoint = 5,
    Internal = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct TgocrModel {
    inner: SequentialModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: TgocrStatus, msg: impl Into<String>) -> TgocrStatus {
    set_error(msg.into());
    status
}

fn status_of(err: &Error) -> TgocrStatus {
    match err {
        Error::Io { .. } => TgocrStatus::Io,
        Error::Decode { .. } | Error::UnsupportedFormat { .. } => TgocrStatus::Image,
        Error::Checkpoint { .. } => TgocrStatus::Checkpoint,
        Error::Config(_) | Error::Shape(_) | Error::Size(_) | Error::Data(_) => TgocrStatus::InvalidArgument,
        _ => TgocrStatus::Internal,
    }
}

/// Runs `f`, converting library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), TgocrStatus>) -> TgocrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TgocrStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TgocrStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: tgocr::Result<T>) -> Result<T, TgocrStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), TgocrStatus> {
    if p.is_null() {
        Err(fail(TgocrStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, TgocrStatus> {
    non_null(path, "path")?;
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(TgocrStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn bytes_arg<'a>(bytes: *const u8, len: usize) -> Result<&'a [u8], TgocrStatus> {
    non_null(bytes, "bytes")?;
    Ok(std::slice::from_raw_parts(bytes, len))
}

fn store_model(out: *mut *mut TgocrModel, model: SequentialModel<f32>) {
    let handle = Box::into_raw(Box::new(TgocrModel { inner: model }));
    // SAFETY: callers checked `out` for null.
    unsafe { *out = handle };
}

fn run_prediction(
    model: &TgocrModel,
    image: Tensor<f32>,
    probs_out: *mut f32,
    class_out: *mut u32,
) -> Result<(), TgocrStatus> {
    let input = lift(image.reshape(&[1, 1, IMAGE_SIDE, IMAGE_SIDE]))?;
    let probs = lift(model.inner.predict_proba(&input))?;
    let best = argmax(probs.data());
    if !probs_out.is_null() {
        // SAFETY: caller provides room for TGOCR_CLASSES floats.
        unsafe { ptr::copy_nonoverlapping(probs.data().as_ptr(), probs_out, TGOCR_CLASSES) };
    }
    if !class_out.is_null() {
        // SAFETY: non-null pointer to a u32 supplied by the caller.
        unsafe { *class_out = best as u32 };
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tgocr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failed call on this thread, or null. The
/// pointer stays valid until the next tgocr call on the same thread.
#[no_mangle]
pub extern "C" fn tgocr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a freshly initialized model (`TGOCR_ARCH_MLP` or `TGOCR_ARCH_CNN`).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tgocr_model_build(architecture: u32, seed: u64, out: *mut *mut TgocrModel) -> TgocrStatus {
    guard(|| {
        non_null(out, "out")?;
        let arch = match architecture {
            TGOCR_ARCH_MLP => Architecture::Mlp,
            TGOCR_ARCH_CNN => Architecture::Cnn,
            other => return Err(fail(TgocrStatus::InvalidArgument, format!("unknown architecture {other}"))),
        };
        store_model(out, lift(build(arch, seed))?);
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tgocr_model_load(path: *const c_char, out: *mut *mut TgocrModel) -> TgocrStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        store_model(out, lift(load_checkpoint(&path))?);
        Ok(())
    })
}

/// Writes the model to `path` atomically, recording default optimizer settings.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tgocr_model_save(model: *const TgocrModel, path: *const c_char) -> TgocrStatus {
    guard(|| {
        non_null(model, "model")?;
        let path = path_arg(path)?;
        lift(save_checkpoint(&(*model).inner, &path, &AdadeltaConfig::default()))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tgocr_model_free(model: *mut TgocrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tgocr_model_param_count(model: *const TgocrModel, out: *mut usize) -> TgocrStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).inner.param_count();
        Ok(())
    })
}

/// Classifies one preprocessed image of `TGOCR_IMAGE_PIXELS` values in
/// `[0, 1]` (ink high, row-major). Either output pointer may be null.
///
/// # Safety
/// `pixels` must point to `len` floats; `probs_out`, if not null, to room
/// for `TGOCR_CLASSES` floats.
#[no_mangle]
pub unsafe extern "C" fn tgocr_predict(
    model: *const TgocrModel,
    pixels: *const f32,
    len: usize,
    probs_out: *mut f32,
    class_out: *mut u32,
) -> TgocrStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(pixels, "pixels")?;
        if len != TGOCR_IMAGE_PIXELS {
            return Err(fail(
                TgocrStatus::InvalidArgument,
                format!("expected {TGOCR_IMAGE_PIXELS} pixels, got {len}"),
            ));
        }
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(fail(TgocrStatus::InvalidArgument, "pixels contain NaN or infinity"));
        }
        let image = lift(Tensor::from_vec(&[1, IMAGE_SIDE, IMAGE_SIDE], data))?;
        run_prediction(&*model, image, probs_out, class_out)
    })
}

/// Decodes a 32×32 24-bit BMP held in memory and writes its preprocessed
/// pixels (`TGOCR_IMAGE_PIXELS` floats) to `out`.
///
/// # Safety
/// `bytes` must point to `len` bytes; `out` to room for the pixels.
#[no_mangle]
pub unsafe extern "C" fn tgocr_preprocess_bitmap(bytes: *const u8, len: usize, out: *mut f32) -> TgocrStatus {
    guard(|| {
        non_null(out, "out")?;
        let raw = lift(decode_bitmap(bytes_arg(bytes, len)?))?;
        let image = preprocess::<f32>(&raw);
        ptr::copy_nonoverlapping(image.data().as_ptr(), out, TGOCR_IMAGE_PIXELS);
        Ok(())
    })
}

/// Decodes, preprocesses and classifies a BMP held in memory.
///
/// # Safety
/// As for [`tgocr_predict`], with `bytes` pointing to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tgocr_predict_bitmap(
    model: *const TgocrModel,
    bytes: *const u8,
    len: usize,
    probs_out: *mut f32,
    class_out: *mut u32,
) -> TgocrStatus {
    guard(|| {
        non_null(model, "model")?;
        let raw = lift(decode_bitmap(bytes_arg(bytes, len)?))?;
        run_prediction(&*model, preprocess(&raw), probs_out, class_out)
    })
}
