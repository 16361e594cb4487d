//! C ABI for the clustering pipeline: opaque handles over datasets,
//! configurations, and fit results, with integer status codes and a
//! per-thread error message. The header is generated into `include/gpc.h`.

use gpc_core::config::RunConfig;
use gpc_core::dataset::{self, FeatureDataset, FileFormat, SynthSpec};
use gpc_core::pipeline::{run_fit, FitArtifacts};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Outcome of every fallible call. Matches the CLI's exit-code classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpcStatus {
    /// Success.
    Ok = 0,
    /// Invalid configuration or arguments.
    Usage = 1,
    /// Malformed or inconsistent data.
    Data = 2,
    /// A numerical operation failed.
    Numerical = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
    /// The implementation panicked; state may be inconsistent.
    Panic = 5,
}

/// An in-memory dataset (features plus optional labels).
pub struct GpcDataset {
    inner: FeatureDataset,
}

/// A run configuration; starts at the documented defaults.
pub struct GpcConfig {
    inner: RunConfig,
}

/// Everything a fit produced: final mixture, assignments, trace, report.
pub struct GpcFitResult {
    inner: FitArtifacts,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn status_of(err: &gpc_core::Error) -> GpcStatus {
    match err.exit_code() {
        1 => GpcStatus::Usage,
        3 => GpcStatus::Numerical,
        _ => GpcStatus::Data,
    }
}

fn fail(err: gpc_core::Error) -> GpcStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn guarded(f: impl FnOnce() -> GpcStatus) -> GpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            GpcStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, GpcStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(GpcStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(GpcStatus::Data)
        }
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn gpc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a dataset from a `.csv` or `.gpcf` file (format by extension)
/// into `*out`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_load(
    path: *const c_char,
    out: *mut *mut GpcDataset,
) -> GpcStatus {
    if out.is_null() {
        set_error("null output pointer");
        return GpcStatus::NullArgument;
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    guarded(|| {
        let loaded = FileFormat::from_path(path).and_then(|f| dataset::load_features(path, f));
        match loaded {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(GpcDataset { inner: ds }));
                GpcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Saves a dataset to `.csv` or `.gpcf` (format by extension).
///
/// # Safety
/// `ds` must be a live dataset handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_save(
    ds: *const GpcDataset,
    path: *const c_char,
) -> GpcStatus {
    if ds.is_null() {
        set_error("null dataset");
        return GpcStatus::NullArgument;
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    guarded(|| {
        let saved =
            FileFormat::from_path(path).and_then(|f| dataset::save_features(&(*ds).inner, path, f));
        match saved {
            Ok(()) => GpcStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Generates a synthetic dataset: `k_true` Gaussian classes of `per_class`
/// points in `d` dimensions, labels kept on a `labelled_fraction` share of
/// the first `k_labelled` classes. `*out` receives the visible dataset;
/// `*out_truth` (optional, may be null) the fully labelled ground truth.
///
/// # Safety
/// `out` must be valid for writes; `out_truth` may be null.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_gen(
    k_true: usize,
    d: usize,
    per_class: usize,
    k_labelled: usize,
    labelled_fraction: f64,
    center_scale: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut GpcDataset,
    out_truth: *mut *mut GpcDataset,
) -> GpcStatus {
    if out.is_null() {
        set_error("null output pointer");
        return GpcStatus::NullArgument;
    }
    guarded(|| {
        let spec = SynthSpec {
            k_true,
            d,
            per_class,
            center_scale,
            sigma,
            k_labelled,
            labelled_fraction,
            seed,
        };
        match dataset::gen_synth(&spec) {
            Ok((visible, truth)) => {
                *out = Box::into_raw(Box::new(GpcDataset { inner: visible }));
                if !out_truth.is_null() {
                    *out_truth = Box::into_raw(Box::new(GpcDataset { inner: truth }));
                }
                GpcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of instances; 0 for a null handle.
///
/// # Safety
/// `ds` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_len(ds: *const GpcDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.n()
}

/// Feature dimension; 0 for a null handle.
///
/// # Safety
/// `ds` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_dim(ds: *const GpcDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.d()
}

/// Releases a dataset handle. Null is a no-op.
///
/// # Safety
/// `ds` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn gpc_dataset_free(ds: *mut GpcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fresh configuration at the library defaults. Never fails.
#[no_mangle]
pub extern "C" fn gpc_config_new() -> *mut GpcConfig {
    Box::into_raw(Box::new(GpcConfig { inner: RunConfig::default() }))
}

/// Sets one kebab-cased key (e.g. `"k-init"`, `"epochs"`, `"replearn"`)
/// to a string value; the value grammar matches the config-file format.
///
/// # Safety
/// `cfg` must be a live config handle; `key`/`value` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gpc_config_set(
    cfg: *mut GpcConfig,
    key: *const c_char,
    value: *const c_char,
) -> GpcStatus {
    if cfg.is_null() || key.is_null() || value.is_null() {
        set_error("null argument");
        return GpcStatus::NullArgument;
    }
    let (key, value) = match (CStr::from_ptr(key).to_str(), CStr::from_ptr(value).to_str()) {
        (Ok(k), Ok(v)) => (k, v),
        _ => {
            set_error("key or value is not valid UTF-8");
            return GpcStatus::Data;
        }
    };
    guarded(|| match (*cfg).inner.set(key, value) {
        Ok(()) => GpcStatus::Ok,
        Err(e) => fail(e),
    })
}

/// Releases a config handle. Null is a no-op.
///
/// # Safety
/// `cfg` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn gpc_config_free(cfg: *mut GpcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the full estimation loop. `truth` may be null (no evaluation);
/// `cfg` may be null (defaults). On success `*out` receives the result.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gpc_fit(
    ds: *const GpcDataset,
    truth: *const GpcDataset,
    cfg: *const GpcConfig,
    out: *mut *mut GpcFitResult,
) -> GpcStatus {
    if ds.is_null() || out.is_null() {
        set_error("null argument");
        return GpcStatus::NullArgument;
    }
    guarded(|| {
        let defaults;
        let config = if cfg.is_null() {
            defaults = RunConfig::default();
            &defaults
        } else {
            &(*cfg).inner
        };
        if let Err(e) = config.validate() {
            return fail(e);
        }
        let truth_ref = if truth.is_null() { None } else { Some(&(*truth).inner) };
        match run_fit(&(*ds).inner, truth_ref, config) {
            Ok(art) => {
                *out = Box::into_raw(Box::new(GpcFitResult { inner: art }));
                GpcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Final number of mixture components; 0 for a null handle.
///
/// # Safety
/// `res` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn gpc_result_k(res: *const GpcFitResult) -> usize {
    if res.is_null() {
        return 0;
    }
    (*res).inner.result.k_final
}

/// Number of assignment rows (= dataset instances); 0 for null.
///
/// # Safety
/// `res` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn gpc_result_len(res: *const GpcFitResult) -> usize {
    if res.is_null() {
        return 0;
    }
    (*res).inner.assignments.len()
}

/// Copies per-instance cluster indices (dataset row order) into `buf`.
/// `len` must equal `gpc_result_len`.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gpc_result_assignments(
    res: *const GpcFitResult,
    buf: *mut usize,
    len: usize,
) -> GpcStatus {
    if res.is_null() || buf.is_null() {
        set_error("null argument");
        return GpcStatus::NullArgument;
    }
    let rows = &(*res).inner.assignments;
    if len != rows.len() {
        set_error(&format!("buffer holds {len} entries, result has {}", rows.len()));
        return GpcStatus::Usage;
    }
    for (slot, (_, cluster)) in rows.iter().enumerate() {
        *buf.add(slot) = *cluster;
    }
    GpcStatus::Ok
}

/// Copies per-instance ids (dataset row order) into `buf`. `len` must
/// equal `gpc_result_len`.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gpc_result_ids(
    res: *const GpcFitResult,
    buf: *mut u64,
    len: usize,
) -> GpcStatus {
    if res.is_null() || buf.is_null() {
        set_error("null argument");
        return GpcStatus::NullArgument;
    }
    let rows = &(*res).inner.assignments;
    if len != rows.len() {
        set_error(&format!("buffer holds {len} entries, result has {}", rows.len()));
        return GpcStatus::Usage;
    }
    for (slot, (id, _)) in rows.iter().enumerate() {
        *buf.add(slot) = *id;
    }
    GpcStatus::Ok
}

/// Full result record as a JSON string; free with `gpc_string_free`.
/// Null on a null handle or serialization failure.
///
/// # Safety
/// `res` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn gpc_result_json(res: *const GpcFitResult) -> *mut c_char {
    if res.is_null() {
        return std::ptr::null_mut();
    }
    let json = match serde_json::to_string(&(*res).inner.result) {
        Ok(j) => j,
        Err(_) => return std::ptr::null_mut(),
    };
    match CString::new(json) {
        Ok(c) => c.into_raw(),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn gpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases a fit result handle. Null is a no-op.
///
/// # Safety
/// `res` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn gpc_result_free(res: *mut GpcFitResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
