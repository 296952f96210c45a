use std::ffi::CStr;
use std::ptr;

use bis_accountant_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bis_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn config_lifecycle_and_estimate() {
    let mut cfg = ptr::null_mut();
    let status = unsafe { bis_config_new(1, 1, 1.0, 1.0, 1e-2, 200_000, 7, 0.1, &mut cfg) };
    assert_eq!(status, BisStatus::Ok);
    assert!(!cfg.is_null());

    let mut a = BisDeltaEstimate::default();
    let mut b = BisDeltaEstimate::default();
    assert_eq!(unsafe { bis_estimate_delta(cfg, 1, true, &mut a) }, BisStatus::Ok);
    assert_eq!(unsafe { bis_estimate_delta(cfg, 3, false, &mut b) }, BisStatus::Ok);
    assert_eq!(a.point.to_bits(), b.point.to_bits());
    assert_eq!(a.samples_used, 200_000);
    assert_eq!(a.screened_out + a.exact_evals, a.samples_used);
    assert!((a.point - 0.12693).abs() < 0.005);

    let mut passed = true;
    assert_eq!(unsafe { bis_verify(cfg, 0, &mut passed) }, BisStatus::Ok);
    assert!(!passed);
    unsafe { bis_config_free(cfg) };
    unsafe { bis_config_free(ptr::null_mut()) };
}

#[test]
fn invalid_configs_report_errors() {
    let mut cfg = ptr::null_mut();
    let status = unsafe { bis_config_new(3, 5, 1.0, 1.0, 1e-2, 200_000, 7, 0.1, &mut cfg) };
    assert_eq!(status, BisStatus::InvalidArgument);
    assert!(cfg.is_null());
    assert!(last_error().contains("exceeds"));

    let status = unsafe { bis_config_new(3, 1, 1.0, 1.0, 1e-2, 10, 7, 0.1, &mut cfg) };
    assert_eq!(status, BisStatus::InvalidArgument);
    assert!(last_error().contains("samples"));

    let status = unsafe { bis_config_new(3, 1, 1.0, 1.0, 1e-2, 2000, 7, 0.1, ptr::null_mut()) };
    assert_eq!(status, BisStatus::NullPointer);

    let mut out = BisDeltaEstimate::default();
    assert_eq!(unsafe { bis_estimate_delta(ptr::null(), 0, true, &mut out) }, BisStatus::NullPointer);
}

#[test]
fn likelihood_entry_points() {
    let log_w: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|v| v.ln()).collect();
    let (mut exact, mut screen) = (0.0, 0.0);
    assert_eq!(unsafe { bis_exact_log_ratio(log_w.as_ptr(), 4, 2, &mut exact) }, BisStatus::Ok);
    assert_eq!(unsafe { bis_screening_log_ratio(log_w.as_ptr(), 4, 2, &mut screen) }, BisStatus::Ok);
    assert!((exact - (35.0f64 / 6.0).ln()).abs() < 1e-14);
    assert!((screen - 6.25f64.ln()).abs() < 1e-14);

    let bad = [0.0, f64::NAN];
    assert_eq!(unsafe { bis_exact_log_ratio(bad.as_ptr(), 2, 1, &mut exact) }, BisStatus::Numerical);
    assert_eq!(unsafe { bis_exact_log_ratio(ptr::null(), 2, 1, &mut exact) }, BisStatus::NullPointer);
    assert_eq!(unsafe { bis_exact_log_ratio(log_w.as_ptr(), 4, 5, &mut exact) }, BisStatus::InvalidArgument);

    let mut delta = 0.0;
    assert_eq!(unsafe { bis_gaussian_mechanism_delta(1.0, 1.0, 1.0, &mut delta) }, BisStatus::Ok);
    assert!((delta - 0.126936737506643946).abs() < 1e-14);
    assert_eq!(unsafe { bis_gaussian_mechanism_delta(-1.0, 1.0, 1.0, &mut delta) }, BisStatus::InvalidArgument);
}

#[test]
fn noise_search_handle() {
    let mut result = ptr::null_mut();
    let status = unsafe {
        bis_find_min_sigma(1, 1, 1.0, 1e-2, BisSearchMode::Optimistic, 200_000, 0.1, 3, 0, &mut result)
    };
    assert_eq!(status, BisStatus::Ok);
    let sigma = unsafe { bis_search_result_sigma(result) };
    assert!((sigma - 1.878).abs() < 0.03, "{sigma}");
    assert!(!unsafe { bis_search_result_is_certified(result) });

    let len = unsafe { bis_search_result_trace_len(result) };
    assert!(len > 0);
    let mut total = 0;
    for i in 0..len {
        let mut est = BisDeltaEstimate::default();
        let mut s = 0.0;
        let mut passed = false;
        assert_eq!(unsafe { bis_search_result_trace_entry(result, i, &mut s, &mut passed, &mut est) }, BisStatus::Ok);
        total += est.samples_used;
    }
    assert_eq!(total, unsafe { bis_search_result_total_samples(result) });
    assert_eq!(
        unsafe { bis_search_result_trace_entry(result, len, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) },
        BisStatus::InvalidArgument
    );

    let json = unsafe { bis_search_result_to_json(result) };
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"status\":\"optimistic\""));
    unsafe { bis_string_free(json) };
    unsafe { bis_search_result_free(result) };
    assert!(unsafe { bis_search_result_sigma(ptr::null()) }.is_nan());
}

#[test]
fn search_failure_status() {
    let mut result = ptr::null_mut();
    // delta below anything reachable under the default ceiling.
    let status = unsafe {
        bis_find_min_sigma(1, 1, 1e-3, 1e-300, BisSearchMode::Optimistic, 20_000, 0.1, 3, 1, &mut result)
    };
    assert_eq!(status, BisStatus::SearchFailed);
    assert!(result.is_null());
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(bis_version()) }.to_str().unwrap();
    assert!(v.starts_with("bis-accountant/"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bis_accountant.h")).unwrap();
    for symbol in [
        "BIS_STATUS_OK",
        "BIS_SEARCH_MODE_OPTIMISTIC",
        "typedef struct BisConfig BisConfig",
        "bis_config_new",
        "bis_estimate_delta",
        "bis_find_min_sigma",
        "bis_search_result_trace_entry",
        "bis_exact_log_ratio",
        "bis_last_error_message",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}
