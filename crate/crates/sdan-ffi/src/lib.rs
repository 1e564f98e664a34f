//! C ABI for the sdan library: opaque model handles, status codes, and
//! super-resolution entry points callable from any language with C linkage.
//!
//! Every function is null-safe. Fallible calls return [`SdanStatus`]; the
//! message of the most recent failure on the current thread is available
//! through [`sdan_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::path::Path;
use std::ptr;

use sdan::checkpoint::load_model;
use sdan::data::ImageRgb;
use sdan::error::Error;
use sdan::model::{count_flops, count_params, super_resolve, Sdan};

/// Status codes mirroring the CLI exit contract.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdanStatus {
    Ok = 0,
    /// Null pointer or malformed argument.
    InvalidArgument = 1,
    ConfigError = 2,
    DataError = 3,
    NumericError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> SdanStatus {
    match err.exit_code() {
        2 => SdanStatus::ConfigError,
        4 => SdanStatus::NumericError,
        _ => SdanStatus::DataError,
    }
}

fn fail(err: &Error) -> SdanStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn invalid(msg: &str) -> SdanStatus {
    set_error(msg);
    SdanStatus::InvalidArgument
}

/// Opaque trained model handle.
pub struct SdanModel {
    inner: Sdan<f32>,
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Option<&'a Path> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok().map(Path::new)
}

/// Load a model from a checkpoint file, preferring EMA weights.
/// On success writes a handle to `out`; free it with [`sdan_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdan_model_load(
    path: *const c_char,
    out: *mut *mut SdanModel,
) -> SdanStatus {
    if out.is_null() {
        return invalid("out pointer is null");
    }
    *out = ptr::null_mut();
    let Some(path) = path_arg(path) else {
        return invalid("path is null or not UTF-8");
    };
    match load_model(path, true) {
        Ok((model, _)) => {
            *out = Box::into_raw(Box::new(SdanModel { inner: model }));
            SdanStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// # Safety
/// `model` must come from [`sdan_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sdan_model_free(model: *mut SdanModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Upscaling factor of a loaded model, or 0 on a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sdan_model_scale(model: *const SdanModel) -> c_int {
    match model.as_ref() {
        Some(m) => m.inner.config().scale as c_int,
        None => 0,
    }
}

/// Number of learnable scalars of a loaded model, or 0 on a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sdan_model_param_count(model: *const SdanModel) -> u64 {
    match model.as_ref() {
        Some(m) => count_params(m.inner.config()),
        None => 0,
    }
}

/// Inference cost of a loaded model at the given output resolution, or 0 on
/// a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sdan_model_flops(
    model: *const SdanModel,
    out_height: u32,
    out_width: u32,
) -> u64 {
    match model.as_ref() {
        Some(m) => count_flops(m.inner.config(), out_height as usize, out_width as usize),
        None => 0,
    }
}

/// Super-resolve a PNG file to another PNG file.
///
/// # Safety
/// All pointers must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sdan_sr_file(
    model: *const SdanModel,
    input: *const c_char,
    output: *const c_char,
) -> SdanStatus {
    let Some(model) = model.as_ref() else {
        return invalid("model handle is null");
    };
    let (Some(input), Some(output)) = (path_arg(input), path_arg(output)) else {
        return invalid("input/output path is null or not UTF-8");
    };
    let run = || -> sdan::Result<()> {
        let img = sdan::data::read_png(input)?;
        let sr = super_resolve(&model.inner, &img)?;
        sdan::data::write_png(output, &sr)
    };
    match run() {
        Ok(()) => SdanStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Super-resolve an interleaved 8-bit RGB buffer of `width` x `height`
/// pixels. `out` must hold 3 * (scale*width) * (scale*height) bytes.
///
/// # Safety
/// `rgb` must point at 3*width*height readable bytes and `out` at the
/// documented number of writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sdan_sr_rgb(
    model: *const SdanModel,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut u8,
) -> SdanStatus {
    let Some(model) = model.as_ref() else {
        return invalid("model handle is null");
    };
    if rgb.is_null() || out.is_null() {
        return invalid("buffer pointer is null");
    }
    if width == 0 || height == 0 {
        return invalid("image dimensions must be positive");
    }
    let (w, h) = (width as usize, height as usize);
    let pixels = std::slice::from_raw_parts(rgb, 3 * w * h).to_vec();
    let image = match ImageRgb::new(w, h, pixels) {
        Ok(img) => img,
        Err(e) => return fail(&e),
    };
    match super_resolve(&model.inner, &image) {
        Ok(sr) => {
            let out_buf = std::slice::from_raw_parts_mut(out, sr.pixels.len());
            out_buf.copy_from_slice(&sr.pixels);
            SdanStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Copy the most recent error message on this thread into `buf` (truncated,
/// always NUL-terminated). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point at `len` writable bytes, or be null to query the length.
#[no_mangle]
pub unsafe extern "C" fn sdan_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}
