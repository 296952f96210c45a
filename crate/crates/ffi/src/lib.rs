//! C ABI for the BIS Monte Carlo accountant.
//!
//! Configurations and search results are opaque handles owned by the caller
//! and released with the matching `*_free` function. Every fallible call
//! returns a [`BisStatus`]; on failure [`bis_last_error_message`] describes
//! the cause. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bis_accountant::accountant::{estimate_delta_with, verify_with, AccountingConfig, DeltaEstimate, EstimateOptions};
use bis_accountant::asymptotics::gaussian_mechanism_delta;
use bis_accountant::likelihood::{exact_log_ratio, screening_log_ratio, LogWeightVector};
use bis_accountant::search::{find_min_sigma_with, NoiseSearchResult, SearchMode, SearchSettings};
use bis_accountant::{Error, MechanismShape};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SearchFailed = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BisSearchMode {
    Certified = 0,
    Optimistic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BisDeltaEstimate {
    pub point: f64,
    pub upper_bound: f64,
    pub samples_used: u64,
    pub screened_out: u64,
    pub exact_evals: u64,
    pub sum_of_values: f64,
    pub sum_of_squares: f64,
}

impl From<DeltaEstimate> for BisDeltaEstimate {
    fn from(e: DeltaEstimate) -> Self {
        Self {
            point: e.point,
            upper_bound: e.upper_bound,
            samples_used: e.samples_used,
            screened_out: e.screened_out,
            exact_evals: e.exact_evals,
            sum_of_values: e.sum_of_values,
            sum_of_squares: e.sum_of_squares,
        }
    }
}

/// Opaque accounting configuration.
pub struct BisConfig(AccountingConfig);

/// Opaque noise search result.
pub struct BisSearchResult(NoiseSearchResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> BisStatus {
    match err {
        Error::InvalidShape(_) | Error::InvalidConfig(_) | Error::EnumerationTooLarge { .. } => BisStatus::InvalidArgument,
        Error::BracketFailed { .. } => BisStatus::SearchFailed,
        Error::NonFinite(_) => BisStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), (BisStatus, String)>>(f: F) -> BisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BisStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BisStatus::Panic
        }
    }
}

fn lift<T>(r: bis_accountant::Result<T>) -> Result<T, (BisStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (BisStatus, String) {
    (BisStatus::NullPointer, format!("{name} is null"))
}

fn options(threads: u32, screening: bool) -> EstimateOptions {
    EstimateOptions { threads: (threads > 0).then_some(threads as usize), screening }
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn bis_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bis_version() -> *const c_char {
    concat!("bis-accountant/", env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn bis_config_new(
    t: usize,
    k: usize,
    sigma: f64,
    epsilon: f64,
    delta_target: f64,
    samples: u64,
    seed: u64,
    delta_split: f64,
    out: *mut *mut BisConfig,
) -> BisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let shape = lift(MechanismShape::new(t, k))?;
        let config = AccountingConfig { shape, sigma, epsilon, delta_target, samples, seed, delta_split };
        lift(config.validate())?;
        *out = Box::into_raw(Box::new(BisConfig(config)));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`bis_config_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bis_config_free(config: *mut BisConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the Monte Carlo estimate. `threads = 0` uses every core.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bis_estimate_delta(
    config: *const BisConfig,
    threads: u32,
    screening: bool,
    out: *mut BisDeltaEstimate,
) -> BisStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let estimate = lift(estimate_delta_with(&config.0, options(threads, screening)))?;
        *out = estimate.into();
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bis_verify(config: *const BisConfig, threads: u32, out: *mut bool) -> BisStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(verify_with(&config.0, options(threads, true)))?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable; the result is released with
/// [`bis_search_result_free`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn bis_find_min_sigma(
    t: usize,
    k: usize,
    epsilon: f64,
    delta_target: f64,
    mode: BisSearchMode,
    samples: u64,
    delta_split: f64,
    seed: u64,
    threads: u32,
    out: *mut *mut BisSearchResult,
) -> BisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let shape = lift(MechanismShape::new(t, k))?;
        let mode = match mode {
            BisSearchMode::Certified => SearchMode::Certified,
            BisSearchMode::Optimistic => SearchMode::Optimistic,
        };
        let settings = SearchSettings {
            threads: (threads > 0).then_some(threads as usize),
            ..SearchSettings::for_samples(samples)
        };
        let result = lift(find_min_sigma_with(shape, epsilon, delta_target, mode, samples, delta_split, seed, &settings))?;
        *out = Box::into_raw(Box::new(BisSearchResult(result)));
        Ok(())
    })
}

/// Minimal noise multiplier found, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bis_search_result_sigma(result: *const BisSearchResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.sigma)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bis_search_result_is_certified(result: *const BisSearchResult) -> bool {
    result.as_ref().is_some_and(|r| r.0.status == SearchMode::Certified)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bis_search_result_total_samples(result: *const BisSearchResult) -> u64 {
    result.as_ref().map_or(0, |r| r.0.total_samples)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bis_search_result_trace_len(result: *const BisSearchResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.trace.len())
}

/// Copies trace entry `index`. Any of the out pointers may be null.
///
/// # Safety
/// `result` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bis_search_result_trace_entry(
    result: *const BisSearchResult,
    index: usize,
    sigma: *mut f64,
    passed: *mut bool,
    estimate: *mut BisDeltaEstimate,
) -> BisStatus {
    guard(|| {
        let result = result.as_ref().ok_or_else(|| null("result"))?;
        let entry = result.0.trace.get(index).ok_or_else(|| {
            (BisStatus::InvalidArgument, format!("trace index {index} out of range ({})", result.0.trace.len()))
        })?;
        if !sigma.is_null() {
            *sigma = entry.sigma;
        }
        if !passed.is_null() {
            *passed = entry.passed;
        }
        if !estimate.is_null() {
            *estimate = entry.estimate.into();
        }
        Ok(())
    })
}

/// Serialises the full result as JSON. Free with [`bis_string_free`].
/// Returns null for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bis_search_result_to_json(result: *const BisSearchResult) -> *mut c_char {
    match result.as_ref() {
        Some(r) => {
            let json = serde_json::to_string(&r.0).unwrap_or_default();
            CString::new(json).map_or(ptr::null_mut(), CString::into_raw)
        }
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `result` must come from [`bis_find_min_sigma`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bis_search_result_free(result: *mut BisSearchResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bis_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn log_weights<'a>(log_w: *const f64, len: usize) -> Result<&'a [f64], (BisStatus, String)> {
    if log_w.is_null() {
        return Err(null("log_w"));
    }
    Ok(slice::from_raw_parts(log_w, len))
}

/// Exact `log P(y)/Q(y)` for log weights `log_w[0..len]` and `k` participations.
///
/// # Safety
/// `log_w` must point to `len` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn bis_exact_log_ratio(log_w: *const f64, len: usize, k: usize, out: *mut f64) -> BisStatus {
    guard(|| {
        let w = lift(LogWeightVector::new(log_weights(log_w, len)?.to_vec()))?;
        let shape = lift(MechanismShape::new(len, k))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(exact_log_ratio(&w, shape))?.value;
        Ok(())
    })
}

/// Screening upper bound `k log(mean w)`.
///
/// # Safety
/// `log_w` must point to `len` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn bis_screening_log_ratio(log_w: *const f64, len: usize, k: usize, out: *mut f64) -> BisStatus {
    guard(|| {
        let w = lift(LogWeightVector::new(log_weights(log_w, len)?.to_vec()))?;
        let shape = lift(MechanismShape::new(len, k))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(screening_log_ratio(&w, shape))?.value;
        Ok(())
    })
}

/// Analytic `delta(epsilon)` of a Gaussian mechanism.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bis_gaussian_mechanism_delta(sensitivity: f64, sigma: f64, epsilon: f64, out: *mut f64) -> BisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(sensitivity > 0.0 && sigma > 0.0 && epsilon >= 0.0) {
            return Err((BisStatus::InvalidArgument, "sensitivity and sigma must be positive, epsilon non-negative".into()));
        }
        *out = gaussian_mechanism_delta(sensitivity, sigma, epsilon);
        Ok(())
    })
}
