//! C ABI for the vvaas simulator.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free` function. Every fallible call returns a
//! [`VvaasStatus`]; on failure `vvaas_last_error_message` describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vvaas::engine::{self, Scenario, SimError};
use vvaas::geo::{classify_location, classify_speed, quantize_heading};
use vvaas::metrics::{self, SimulationReport};
use vvaas::migration::plan_transfer;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VvaasStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    InvariantViolation = 5,
    Panic = 6,
}

/// Parsed and validated scenario.
pub struct VvaasScenario {
    inner: Scenario,
}

/// Result of one run.
pub struct VvaasReport {
    report: SimulationReport,
    csv: CString,
    events: CString,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VvaasSummary {
    pub seed: u64,
    pub n_vehicles: u32,
    pub migrations_total: u64,
    pub to_vehicle: u64,
    pub to_rsu: u64,
    pub failed: u64,
    pub pct_to_vehicle: f64,
    pub pct_to_rsu: f64,
    pub mean_downtime_s: f64,
    pub vv_completed: u64,
    pub vv_failed: u64,
    pub vv_censored: u64,
    pub mean_remaining_time_sampled_s: f64,
    /// Non-zero when no migration succeeded and the percentages are 0.
    pub no_data: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VvaasTransferPlan {
    pub rounds: u32,
    pub live_duration_s: f64,
    pub stop_and_copy_mb: f64,
    pub downtime_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: VvaasStatus, msg: impl Into<String>) -> VvaasStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> VvaasStatus) -> VvaasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(VvaasStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, VvaasStatus> {
    if p.is_null() {
        return Err(fail(VvaasStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(VvaasStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vvaas_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn vvaas_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML scenario. Relative paths inside it resolve against
/// `base_dir`, which may be null for the current directory.
///
/// # Safety
/// `toml` and a non-null `base_dir` must be NUL-terminated strings; `out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_scenario_from_toml(
    toml: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut VvaasScenario,
) -> VvaasStatus {
    guard(|| {
        if out.is_null() {
            return fail(VvaasStatus::NullArgument, "out is null");
        }
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let base = if base_dir.is_null() {
            "."
        } else {
            match str_arg(base_dir, "base_dir") {
                Ok(b) => b,
                Err(s) => return s,
            }
        };
        match Scenario::from_toml_str(text, base) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(VvaasScenario { inner }));
                VvaasStatus::Ok
            }
            Err(e) => fail(VvaasStatus::Config, e.to_string()),
        }
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_scenario_load(path: *const c_char, out: *mut *mut VvaasScenario) -> VvaasStatus {
    guard(|| {
        if out.is_null() {
            return fail(VvaasStatus::NullArgument, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Scenario::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(VvaasScenario { inner }));
                VvaasStatus::Ok
            }
            Err(e) => fail(VvaasStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vvaas_scenario_free(scenario: *mut VvaasScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the scenario with `seed`.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_run(
    scenario: *const VvaasScenario,
    seed: u64,
    out: *mut *mut VvaasReport,
) -> VvaasStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(VvaasStatus::NullArgument, "scenario or out is null");
        }
        match engine::run(&(*scenario).inner, seed) {
            Ok(o) => {
                let csv = metrics::reports_to_csv(std::slice::from_ref(&o.report));
                let report = VvaasReport {
                    report: o.report,
                    csv: CString::new(csv).unwrap_or_default(),
                    events: CString::new(o.events_jsonl).unwrap_or_default(),
                };
                *out = Box::into_raw(Box::new(report));
                VvaasStatus::Ok
            }
            Err(e @ SimError::InvariantViolation { .. }) => fail(VvaasStatus::InvariantViolation, e.to_string()),
            Err(e) => fail(VvaasStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_report_summary(report: *const VvaasReport, out: *mut VvaasSummary) -> VvaasStatus {
    if report.is_null() || out.is_null() {
        return fail(VvaasStatus::NullArgument, "report or out is null");
    }
    let r = &(*report).report;
    *out = VvaasSummary {
        seed: r.seed,
        n_vehicles: r.n_vehicles,
        migrations_total: r.migrations_total,
        to_vehicle: r.to_vehicle,
        to_rsu: r.to_rsu,
        failed: r.failed,
        pct_to_vehicle: r.pct_to_vehicle,
        pct_to_rsu: r.pct_to_rsu,
        mean_downtime_s: r.mean_downtime,
        vv_completed: r.vv_completed,
        vv_failed: r.vv_failed,
        vv_censored: r.vv_censored,
        mean_remaining_time_sampled_s: r.mean_remaining_time_sampled,
        no_data: u8::from(r.no_data),
    };
    VvaasStatus::Ok
}

/// The report as CSV (header plus one row). Owned by the report.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vvaas_report_csv(report: *const VvaasReport) -> *const c_char {
    if report.is_null() {
        return ptr::null();
    }
    (*report).csv.as_ptr()
}

/// The JSON-lines event log. Owned by the report.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vvaas_report_events(report: *const VvaasReport) -> *const c_char {
    if report.is_null() {
        return ptr::null();
    }
    (*report).events.as_ptr()
}

/// # Safety
/// `report` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vvaas_report_free(report: *mut VvaasReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Heading sector 0..=7 for N, NE, E, SE, S, SW, W, NW.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_quantize_heading(deg: f64, out: *mut u8) -> VvaasStatus {
    if out.is_null() {
        return fail(VvaasStatus::NullArgument, "out is null");
    }
    match quantize_heading(deg) {
        Ok(h) => {
            *out = h.index() as u8;
            VvaasStatus::Ok
        }
        Err(e) => fail(VvaasStatus::InvalidArgument, e.to_string()),
    }
}

/// Speed class 0 = slow, 1 = medium, 2 = fast.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_classify_speed(kmh: f64, out: *mut u8) -> VvaasStatus {
    if out.is_null() {
        return fail(VvaasStatus::NullArgument, "out is null");
    }
    match classify_speed(kmh) {
        Ok(c) => {
            *out = c.index() as u8;
            VvaasStatus::Ok
        }
        Err(e) => fail(VvaasStatus::InvalidArgument, e.to_string()),
    }
}

/// Location band 0 = same, 1 = near, 2 = far.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_classify_location(meters: f64, out: *mut u8) -> VvaasStatus {
    if out.is_null() {
        return fail(VvaasStatus::NullArgument, "out is null");
    }
    match classify_location(meters) {
        Ok(m) => {
            *out = m as u8;
            VvaasStatus::Ok
        }
        Err(e) => fail(VvaasStatus::InvalidArgument, e.to_string()),
    }
}

/// Pre-copy transfer plan.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vvaas_plan_transfer(
    image_mb: f64,
    dirty_rate_mbps: f64,
    bandwidth_mbps: f64,
    max_rounds: u32,
    stop_threshold_mb: f64,
    out: *mut VvaasTransferPlan,
) -> VvaasStatus {
    if out.is_null() {
        return fail(VvaasStatus::NullArgument, "out is null");
    }
    match plan_transfer(image_mb, dirty_rate_mbps, bandwidth_mbps, max_rounds, stop_threshold_mb) {
        Ok(p) => {
            *out = VvaasTransferPlan {
                rounds: p.rounds() as u32,
                live_duration_s: p.live_duration(),
                stop_and_copy_mb: p.stop_and_copy_mb,
                downtime_s: p.downtime,
            };
            VvaasStatus::Ok
        }
        Err(e) => fail(VvaasStatus::InvalidArgument, e.to_string()),
    }
}
