//! C ABI over a trained supercone model.
//!
//! Models are opaque `ScModel` handles created by `sc_model_load` or
//! `sc_model_load_json` and released with `sc_model_free`. Every fallible
//! call returns an `ScStatus`; on failure a message for the calling thread
//! is available from `sc_last_error_message` until that thread's next call.
//! A loaded model is immutable, so one handle may serve many threads.
//!
//! Output buffers are caller-owned. A buffer shorter than required yields
//! `SC_STATUS_BUFFER_TOO_SMALL` and leaves it untouched.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use supercone::cli::ModelFile;
use supercone::{ConceptVector, SuperConeModel};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// An argument was malformed or does not fit the model.
    InvalidArgument = 2,
    /// The model file could not be read.
    Io = 3,
    /// The model file was read but is not a valid model.
    InvalidModel = 4,
    BufferTooSmall = 5,
    /// Internal failure; the handle stays usable.
    Internal = 6,
}

/// Opaque trained model.
pub struct ScModel {
    inner: SuperConeModel,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Failure(ScStatus, String);

fn fail(status: ScStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, records its failure message, and converts panics to `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ScStatus::Internal
        }
    }
}

unsafe fn model_ref<'a>(model: *const ScModel) -> Result<&'a ScModel, Failure> {
    model
        .as_ref()
        .ok_or_else(|| fail(ScStatus::NullArgument, "model is null"))
}

unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(ScStatus::NullArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(fail(ScStatus::NullArgument, format!("{what} is null")));
    }
    if len < need {
        return Err(fail(
            ScStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} required"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

fn build_model(text: &str) -> Result<*mut ScModel, Failure> {
    let inner = ModelFile::from_json(text)
        .and_then(ModelFile::into_model)
        .map_err(|e| fail(ScStatus::InvalidModel, e.reason))?;
    let labels = inner
        .label_space
        .classes()
        .iter()
        .map(|c| CString::new(c.replace('\0', " ")).expect("nul bytes removed"))
        .collect();
    Ok(Box::into_raw(Box::new(ScModel { inner, labels })))
}

/// Loads a model file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_model_load(path: *const c_char, out: *mut *mut ScModel) -> ScStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(ScStatus::NullArgument, "path or out is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(ScStatus::InvalidArgument, "path is not UTF-8"))?;
        let text = std::fs::read_to_string(Path::new(path))
            .map_err(|e| fail(ScStatus::Io, format!("cannot read {path}: {e}")))?;
        *out = build_model(&text)?;
        Ok(())
    })
}

/// Loads a model from the `len` bytes of model-file JSON at `json`.
///
/// # Safety
/// `json` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_model_load_json(json: *const c_char, len: usize, out: *mut *mut ScModel) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(ScStatus::NullArgument, "out is null"));
        }
        let bytes = input(json.cast::<u8>(), len, "json")?;
        let text = std::str::from_utf8(bytes).map_err(|_| fail(ScStatus::InvalidArgument, "json is not UTF-8"))?;
        *out = build_model(text)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_model_free(model: *mut ScModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_model_num_classes(model: *const ScModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Width of a dense concept vector; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_model_vocab_size(model: *const ScModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.vocab_size)
}

/// Number of combination weights (complementary expert plus every expert
/// block); 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_model_num_candidates(model: *const ScModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_candidates())
}

/// Token of class `class_index`, valid for the handle's lifetime; null if
/// the handle is null or the index is out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_model_class_label(model: *const ScModel, class_index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.labels.get(class_index))
        .map_or(std::ptr::null(), |s| s.as_ptr())
}

/// Class probabilities for a dense concept vector of `sc_model_vocab_size`
/// values, written to `out[0..num_classes]`.
///
/// # Safety
/// `x` must point to `len` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sc_model_predict_dense(
    model: *const ScModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> ScStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = input(x, len, "x")?;
        let out = output(out, out_len, m.inner.num_classes(), "out")?;
        let p = m
            .inner
            .predict_dense(x)
            .map_err(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        out.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Class probabilities for a sparse concept vector given as `nnz` strictly
/// increasing 0-based `indices` with their `values`.
///
/// # Safety
/// `indices` and `values` must point to `nnz` values each and `out` to
/// `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sc_model_predict_sparse(
    model: *const ScModel,
    indices: *const usize,
    values: *const f64,
    nnz: usize,
    out: *mut f64,
    out_len: usize,
) -> ScStatus {
    guard(|| {
        let m = model_ref(model)?;
        let indices = input(indices, nnz, "indices")?;
        let values = input(values, nnz, "values")?;
        let out = output(out, out_len, m.inner.num_classes(), "out")?;
        let c = ConceptVector::new(indices.iter().copied().zip(values.iter().copied()).collect())
            .map_err(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        let p = m
            .inner
            .predict_final(&c)
            .map_err(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        out.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Combination weights for a dense concept vector, written to
/// `out[0..num_candidates]` with the complementary expert first.
///
/// # Safety
/// `x` must point to `len` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sc_model_combination_weights(
    model: *const ScModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> ScStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = input(x, len, "x")?;
        let out = output(out, out_len, m.inner.num_candidates(), "out")?;
        if x.len() != m.inner.vocab_size {
            return Err(fail(
                ScStatus::InvalidArgument,
                format!(
                    "concept width {} does not match vocab size {}",
                    x.len(),
                    m.inner.vocab_size
                ),
            ));
        }
        let c = ConceptVector::from_dense(x).map_err(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        let w = m
            .inner
            .combination_weights(&c)
            .map_err(|e| fail(ScStatus::InvalidArgument, e.to_string()))?;
        out.copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// Message of the calling thread's last failure; empty after a success.
/// Valid until the thread's next call into this library.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
