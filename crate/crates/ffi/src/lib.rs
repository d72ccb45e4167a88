//! C interface to the `ddbh` simulator.
//!
//! Scenarios and results are opaque handles created and destroyed through this
//! API. Every fallible call returns a [`DdbhStatus`]; on failure a message is
//! kept per thread and can be copied out with [`ddbh_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ddbh::lattice::LatticeGraph;
use ddbh::scenario::{self, RunOptions, ScenarioConfig, ScenarioError, SimulationResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdbhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Runtime = 4,
    OutOfRange = 5,
    NotFound = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Occupation and equal-time correlation of one site.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DdbhSiteStats {
    pub n: f64,
    pub n_err: f64,
    /// False when `g2` is not resolved above its error bar.
    pub g2_defined: bool,
    pub g2: f64,
    pub g2_err: f64,
}

/// Parsed scenario configuration.
pub struct DdbhScenario {
    config: ScenarioConfig,
}

/// Output of a simulation or oracle run.
pub struct DdbhResult {
    result: SimulationResult,
    lattice: LatticeGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: DdbhStatus, msg: impl Into<String>) -> DdbhStatus {
    set_error(msg);
    status
}

fn from_scenario(e: ScenarioError) -> DdbhStatus {
    let status = match e {
        ScenarioError::Config(_) | ScenarioError::UnknownPreset(_) => DdbhStatus::Config,
        _ => DdbhStatus::Runtime,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> DdbhStatus) -> DdbhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == DdbhStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DdbhStatus::Panic, msg)
        }
    }
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, DdbhStatus> {
    if s.is_null() {
        return Err(fail(DdbhStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(DdbhStatus::InvalidUtf8, "string argument is not UTF-8"))
}

macro_rules! deref {
    ($p:expr) => {
        match $p.as_ref() {
            Some(v) => v,
            None => return fail(DdbhStatus::NullPointer, "null handle"),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr) => {
        match $p.as_mut() {
            Some(v) => v,
            None => return fail(DdbhStatus::NullPointer, "null handle"),
        }
    };
}

/// Copy `s` into `buf` with a trailing NUL. `needed` receives the full length including the NUL.
unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> DdbhStatus {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || cap < s.len() + 1 {
        return fail(DdbhStatus::BufferTooSmall, format!("need {} bytes", s.len() + 1));
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    DdbhStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddbh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must hold `cap` writable bytes or be null; `needed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ddbh_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> DdbhStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(&msg, buf, cap, needed)
}

/// Parse a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ddbh_scenario_from_toml(toml: *const c_char, out: *mut *mut DdbhScenario) -> DdbhStatus {
    guard(|| {
        if out.is_null() {
            return fail(DdbhStatus::NullPointer, "null out pointer");
        }
        let src = match text(toml) {
            Ok(s) => s,
            Err(e) => return e,
        };
        let config = match ScenarioConfig::from_toml_str(src) {
            Ok(c) => c,
            Err(e) => return from_scenario(e),
        };
        if let Err(e) = config.resolve() {
            return from_scenario(e);
        }
        *out = Box::into_raw(Box::new(DdbhScenario { config }));
        DdbhStatus::Ok
    })
}

/// Load a named preset such as `"fig3"`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ddbh_scenario_from_preset(name: *const c_char, out: *mut *mut DdbhScenario) -> DdbhStatus {
    guard(|| {
        if out.is_null() {
            return fail(DdbhStatus::NullPointer, "null out pointer");
        }
        let name = match text(name) {
            Ok(s) => s,
            Err(e) => return e,
        };
        match scenario::preset(name) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(DdbhScenario { config }));
                DdbhStatus::Ok
            }
            Err(e) => from_scenario(e),
        }
    })
}

/// # Safety
/// `sc` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ddbh_scenario_free(sc: *mut DdbhScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// # Safety
/// `sc` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ddbh_scenario_set_seed(sc: *mut DdbhScenario, seed: u64) -> DdbhStatus {
    let sc = deref_mut!(sc);
    sc.config.seed = seed;
    DdbhStatus::Ok
}

/// # Safety
/// `sc` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ddbh_scenario_set_trajectories(sc: *mut DdbhScenario, n: usize) -> DdbhStatus {
    let sc = deref_mut!(sc);
    if n == 0 {
        return fail(DdbhStatus::OutOfRange, "trajectory count must be positive");
    }
    sc.config.integration.trajectories = n;
    DdbhStatus::Ok
}

/// Time step in units of `1 / gamma`.
///
/// # Safety
/// `sc` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ddbh_scenario_set_dt(sc: *mut DdbhScenario, dt: f64) -> DdbhStatus {
    let sc = deref_mut!(sc);
    let mut c = sc.config.clone();
    c.integration.dt = dt;
    if let Err(e) = c.resolve() {
        return from_scenario(e);
    }
    sc.config = c;
    DdbhStatus::Ok
}

/// # Safety
/// `sc` must be a live scenario handle and `n_sites` writable.
#[no_mangle]
pub unsafe extern "C" fn ddbh_scenario_n_sites(sc: *const DdbhScenario, n_sites: *mut usize) -> DdbhStatus {
    guard(|| {
        let sc = deref!(sc);
        if n_sites.is_null() {
            return fail(DdbhStatus::NullPointer, "null out pointer");
        }
        match sc.config.resolve() {
            Ok(r) => {
                *n_sites = r.lattice.n_sites();
                DdbhStatus::Ok
            }
            Err(e) => from_scenario(e),
        }
    })
}

unsafe fn run(
    sc: *const DdbhScenario,
    out: *mut *mut DdbhResult,
    f: impl FnOnce(&scenario::Scenario) -> Result<SimulationResult, ScenarioError>,
) -> DdbhStatus {
    guard(|| {
        let sc = deref!(sc);
        if out.is_null() {
            return fail(DdbhStatus::NullPointer, "null out pointer");
        }
        let resolved = match sc.config.resolve() {
            Ok(r) => r,
            Err(e) => return from_scenario(e),
        };
        match f(&resolved) {
            Ok(result) => {
                *out = Box::into_raw(Box::new(DdbhResult { result, lattice: resolved.lattice }));
                DdbhStatus::Ok
            }
            Err(e) => from_scenario(e),
        }
    })
}

/// Run the stochastic ensemble. `workers = 0` uses every core.
///
/// # Safety
/// `sc` must be a live scenario handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddbh_simulate(
    sc: *const DdbhScenario,
    deterministic: bool,
    workers: usize,
    out: *mut *mut DdbhResult,
) -> DdbhStatus {
    let opts = RunOptions { deterministic, workers: (workers > 0).then_some(workers), dump: None };
    run(sc, out, |s| scenario::simulate(s, &opts))
}

/// Solve the master equation exactly.
///
/// # Safety
/// `sc` must be a live scenario handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddbh_oracle(sc: *const DdbhScenario, out: *mut *mut DdbhResult) -> DdbhStatus {
    run(sc, out, scenario::oracle_run)
}

/// # Safety
/// `res` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ddbh_result_free(res: *mut DdbhResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn ddbh_result_n_sites(res: *const DdbhResult) -> usize {
    res.as_ref().map_or(0, |r| r.result.sites.len())
}

/// Index of the site with the given label, e.g. `"3B"` or `"(3,3)B"`.
///
/// # Safety
/// `res` must be a live result handle, `label` NUL-terminated and `index` writable.
#[no_mangle]
pub unsafe extern "C" fn ddbh_result_find_site(
    res: *const DdbhResult,
    label: *const c_char,
    index: *mut usize,
) -> DdbhStatus {
    let r = deref!(res);
    if index.is_null() {
        return fail(DdbhStatus::NullPointer, "null out pointer");
    }
    let label = match text(label) {
        Ok(s) => s,
        Err(e) => return e,
    };
    match r.lattice.site_by_label(label) {
        Ok(id) => {
            *index = id.0;
            DdbhStatus::Ok
        }
        Err(e) => fail(DdbhStatus::NotFound, e.to_string()),
    }
}

/// # Safety
/// `res` must be a live result handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ddbh_result_site(res: *const DdbhResult, index: usize, out: *mut DdbhSiteStats) -> DdbhStatus {
    let r = deref!(res);
    let out = deref_mut!(out);
    let Some(row) = r.result.sites.get(index) else {
        return fail(DdbhStatus::OutOfRange, format!("site {index} of {}", r.result.sites.len()));
    };
    *out = DdbhSiteStats {
        n: row.n.value,
        n_err: row.n.stderr,
        g2_defined: row.g2.is_some(),
        g2: row.g2.map_or(f64::NAN, |e| e.value),
        g2_err: row.g2.map_or(f64::NAN, |e| e.stderr),
    };
    DdbhStatus::Ok
}

/// Copy the `g2(tau)` curve of site `index` for `tau >= 0`. Undefined points are NaN.
/// `len` receives the number of points; pass null buffers to query it.
///
/// # Safety
/// `res` must be a live result handle; each non-null buffer must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ddbh_result_curve(
    res: *const DdbhResult,
    index: usize,
    tau: *mut f64,
    g2: *mut f64,
    g2_err: *mut f64,
    cap: usize,
    len: *mut usize,
) -> DdbhStatus {
    let r = deref!(res);
    let Some(c) = r.result.curves.iter().find(|c| c.site == index) else {
        return fail(DdbhStatus::NotFound, format!("no curve recorded for site {index}"));
    };
    if !len.is_null() {
        *len = c.points.len();
    }
    if tau.is_null() && g2.is_null() && g2_err.is_null() {
        return DdbhStatus::Ok;
    }
    if cap < c.points.len() {
        return fail(DdbhStatus::BufferTooSmall, format!("need {} points", c.points.len()));
    }
    for (i, (t, e)) in c.points.iter().enumerate() {
        if !tau.is_null() {
            *tau.add(i) = *t;
        }
        if !g2.is_null() {
            *g2.add(i) = e.map_or(f64::NAN, |e| e.value);
        }
        if !g2_err.is_null() {
            *g2_err.add(i) = e.map_or(f64::NAN, |e| e.stderr);
        }
    }
    DdbhStatus::Ok
}

/// Copy the JSON run summary into `buf`.
///
/// # Safety
/// `res` must be a live result handle; `buf` must hold `cap` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn ddbh_result_summary_json(
    res: *const DdbhResult,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> DdbhStatus {
    guard(|| {
        let r = deref!(res);
        match scenario::summary_json(&r.result, &r.lattice) {
            Ok(s) => copy_out(&s, buf, cap, needed),
            Err(e) => from_scenario(e),
        }
    })
}

/// Optimal detuning and hopping of the three-site chain.
///
/// # Safety
/// `delta_opt` and `j_opt` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddbh_optimal_params(u: f64, gamma: f64, delta_opt: *mut f64, j_opt: *mut f64) -> DdbhStatus {
    if delta_opt.is_null() || j_opt.is_null() {
        return fail(DdbhStatus::NullPointer, "null out pointer");
    }
    match ddbh::analytic::optimal_params(u, gamma) {
        Ok(p) => {
            *delta_opt = p.delta_opt;
            *j_opt = p.j_opt;
            DdbhStatus::Ok
        }
        Err(e) => fail(DdbhStatus::OutOfRange, e.to_string()),
    }
}
