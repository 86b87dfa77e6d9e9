//! C ABI over the brokersim library.
//!
//! Objects are opaque handles created by `bs_*_new`/`bs_*_load` functions and
//! released with the matching `bs_*_free`. Every fallible call returns a
//! [`BsStatus`]; on failure `bs_last_error` describes the problem for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use brokersim::analytic;
use brokersim::scenario::{self, ScenarioSpec};
use brokersim::sim::{run_simulation, RunConfig, RunResult};
use brokersim::tco;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidScenario = 3,
    InvalidArgument = 4,
    SimulationFailed = 5,
    Panic = 6,
}

/// A validated scenario.
pub struct BsScenario {
    spec: ScenarioSpec,
}

/// Outcome of one simulation run.
pub struct BsRun {
    result: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: BsStatus, msg: impl Into<String>) -> BsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BsStatus) -> BsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BsStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, BsStatus> {
    if p.is_null() {
        return Err(fail(BsStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BsStatus::InvalidUtf8, "string argument is not UTF-8"))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(BsStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a builtin scenario by name or a TOML file by path.
///
/// # Safety
/// `reference` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_load(reference: *const c_char, out: *mut *mut BsScenario) -> BsStatus {
    guard(|| {
        non_null!(out);
        let r = try_status!(str_arg(reference));
        match scenario::resolve_scenario(r) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(BsScenario { spec }));
                BsStatus::Ok
            }
            Err(e) => fail(BsStatus::InvalidScenario, e.to_string()),
        }
    })
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `document` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_parse(document: *const c_char, out: *mut *mut BsScenario) -> BsStatus {
    guard(|| {
        non_null!(out);
        let text = try_status!(str_arg(document));
        match scenario::load_scenario(text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(BsScenario { spec }));
                BsStatus::Ok
            }
            Err(e) => fail(BsStatus::InvalidScenario, e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_free(scenario: *mut BsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Sets the acceleration factor (>= 1) used by later runs.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_scenario_set_acceleration(scenario: *mut BsScenario, factor: f64) -> BsStatus {
    guard(|| {
        non_null!(scenario);
        let s = &mut *scenario;
        let next = s.spec.with_acceleration(factor);
        match next.validate() {
            Ok(()) => {
                s.spec = next;
                BsStatus::Ok
            }
            Err(e) => fail(BsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Closed-form stability at `factor`: writes whether every resource stays
/// below saturation and the largest utilization.
///
/// # Safety
/// `scenario` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_predict_stability(
    scenario: *const BsScenario,
    factor: f64,
    out_stable: *mut bool,
    out_max_utilization: *mut f64,
) -> BsStatus {
    guard(|| {
        non_null!(scenario, out_stable, out_max_utilization);
        if !(factor >= 1.0 && factor.is_finite()) {
            return fail(BsStatus::InvalidArgument, format!("acceleration must be >= 1, got {factor}"));
        }
        let v = analytic::predict_stability(&(*scenario).spec, factor);
        *out_stable = v.stable;
        *out_max_utilization = v.max_utilization();
        BsStatus::Ok
    })
}

/// Overall speedup when a fraction `fraction` of the work runs `factor`
/// times faster. Infinity is accepted for `factor`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_amdahl_speedup(fraction: f64, factor: f64, out: *mut f64) -> BsStatus {
    guard(|| {
        non_null!(out);
        match analytic::amdahl_speedup(fraction, factor) {
            Ok(v) => {
                *out = v;
                BsStatus::Ok
            }
            Err(e) => fail(BsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Runs the scenario for `horizon` virtual seconds, excluding the first
/// `warmup` seconds from statistics.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_simulate(
    scenario: *const BsScenario,
    seed: u64,
    horizon: f64,
    warmup: f64,
    out: *mut *mut BsRun,
) -> BsStatus {
    guard(|| {
        non_null!(scenario, out);
        let config = RunConfig {
            seed,
            horizon,
            warmup,
            ..RunConfig::default()
        };
        match run_simulation(&(*scenario).spec, &config, &mut ()) {
            Ok(result) => {
                *out = Box::into_raw(Box::new(BsRun { result }));
                BsStatus::Ok
            }
            Err(brokersim::sim::SimError::Config(m)) => fail(BsStatus::InvalidArgument, m),
            Err(e) => fail(BsStatus::SimulationFailed, e.to_string()),
        }
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_run_free(run: *mut BsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Latency summary of a run. Fields are zero when no frame completed.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsRunStats {
    pub stable: bool,
    pub e2e_mean: f64,
    pub e2e_p99: f64,
    pub wait_mean: f64,
    pub wait_fraction: f64,
    pub throughput: f64,
    pub completed_frames: u64,
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_run_stats(run: *const BsRun, out: *mut BsRunStats) -> BsStatus {
    guard(|| {
        non_null!(run, out);
        let r = &(*run).result;
        let mut s = BsRunStats {
            stable: r.stable(),
            ..BsRunStats::default()
        };
        if let Some(b) = &r.breakdown {
            s.e2e_mean = b.end_to_end.mean;
            s.e2e_p99 = b.end_to_end.p99;
            s.wait_mean = b.stage(brokersim::telemetry::WAIT).map_or(0.0, |w| w.mean);
            s.wait_fraction = b.wait_fraction;
            s.throughput = b.throughput;
            s.completed_frames = b.samples;
        }
        *out = s;
        BsStatus::Ok
    })
}

/// JSON summary of a run. Release with `bs_string_free`.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_run_summary_json(run: *const BsRun, out: *mut *mut c_char) -> BsStatus {
    guard(|| {
        non_null!(run, out);
        match serde_json::to_string(&(*run).result) {
            Ok(s) => match CString::new(s) {
                Ok(c) => {
                    *out = c.into_raw();
                    BsStatus::Ok
                }
                Err(_) => fail(BsStatus::SimulationFailed, "summary contains NUL"),
            },
            Err(e) => fail(BsStatus::SimulationFailed, e.to_string()),
        }
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Yearly cost of both shipped datacenter designs, in cents.
///
/// # Safety
/// Out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_tco_yearly_cents(out_homogeneous: *mut i64, out_purpose_built: *mut i64) -> BsStatus {
    guard(|| {
        non_null!(out_homogeneous, out_purpose_built);
        match tco::compare(&tco::Catalog::shipped(), 0.0) {
            Ok(c) => {
                *out_homogeneous = c.homogeneous.yearly_total.0;
                *out_purpose_built = c.purpose_built.yearly_total.0;
                BsStatus::Ok
            }
            Err(e) => fail(BsStatus::InvalidArgument, e.to_string()),
        }
    })
}
