//! C ABI for `sglab`.
//!
//! Every function returns an [`SglabStatus`]; results come back through out
//! pointers. Objects are opaque handles created by `*_new` functions and
//! released with the matching `*_free`. When a call fails, a description of
//! the failure is available from [`sglab_last_error`] on the same thread.
//! Panics never cross the boundary: they are reported as
//! [`SglabStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sglab::cli::{self, ExperimentConfig, ExperimentReport};
use sglab::dynamics::{step_flow, FlowParams, FlowState};
use sglab::error::LabError;
use sglab::random_fields::{compute_renorm_constants, sample_gaussian_pair_indexed};
use sglab::spectral_torus::FrequencyLattice;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SglabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    Unresolved = 4,
    NonFinite = 5,
    Saturation = 6,
    TimestepTooLarge = 7,
    ConfigError = 8,
    IoError = 9,
    NotFound = 10,
    Panic = 11,
    Other = 12,
}

impl From<&LabError> for SglabStatus {
    fn from(e: &LabError) -> Self {
        match e {
            LabError::InvalidParameter(_)
            | LabError::SingularPoint(_)
            | LabError::GridMismatch(_) => SglabStatus::InvalidParameter,
            LabError::Unresolved(_) | LabError::ModulationUnderresolved(_) => {
                SglabStatus::Unresolved
            }
            LabError::NonFinite(_) => SglabStatus::NonFinite,
            LabError::Saturation(_) => SglabStatus::Saturation,
            LabError::TimestepTooLarge { .. } => SglabStatus::TimestepTooLarge,
            LabError::Config(_) | LabError::Json(_) => SglabStatus::ConfigError,
            LabError::Io(_) | LabError::Csv(_) => SglabStatus::IoError,
            #[allow(unreachable_patterns)]
            _ => SglabStatus::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: SglabStatus, msg: impl Into<String>) -> SglabStatus {
    set_error(msg);
    status
}

fn lab(e: LabError) -> SglabStatus {
    let status = SglabStatus::from(&e);
    fail(status, e.to_string())
}

/// Run `f`, converting panics into `Panic`.
fn guard(f: impl FnOnce() -> SglabStatus) -> SglabStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SglabStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, SglabStatus> {
    if s.is_null() {
        return Err(fail(SglabStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(SglabStatus::InvalidUtf8, "string argument is not UTF-8"))
}

macro_rules! out_ptr {
    ($p:expr) => {
        if $p.is_null() {
            return fail(SglabStatus::NullPointer, "null output pointer");
        }
    };
}

/// Message describing the most recent failure on this thread, or null.
/// The pointer stays valid until the next call into the library on this
/// thread.
#[no_mangle]
pub extern "C" fn sglab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sglab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn sglab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn give_string(s: String, out: *mut *mut c_char) -> SglabStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: callers checked `out` for null.
            unsafe { *out = c.into_raw() };
            SglabStatus::Ok
        }
        Err(_) => fail(SglabStatus::Other, "string contains an interior NUL"),
    }
}

// ---------------------------------------------------------------------------
// Renormalisation constants
// ---------------------------------------------------------------------------

/// σ_N and γ_N = exp(β²σ_N/2) on the minimal lattice for cutoff `n`.
///
/// # Safety
/// `sigma_n` and `gamma_n` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_renorm_constants(
    n: f64,
    beta2: f64,
    sigma_n: *mut f64,
    gamma_n: *mut f64,
) -> SglabStatus {
    out_ptr!(sigma_n);
    out_ptr!(gamma_n);
    guard(|| {
        let rc = match FrequencyLattice::for_cutoff(n)
            .and_then(|lat| compute_renorm_constants(&lat, n, beta2))
        {
            Ok(rc) => rc,
            Err(e) => return lab(e),
        };
        *sigma_n = rc.sigma_n;
        *gamma_n = rc.gamma_n;
        SglabStatus::Ok
    })
}

/// Analytic E[Θ_N(z₁)Θ̄_N(z₂)] for z = (t, x₁, x₂), t ∈ [0, 1].
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sglab_chaos_two_point(
    n: f64,
    beta2: f64,
    t1: f64,
    x1: f64,
    y1: f64,
    t2: f64,
    x2: f64,
    y2: f64,
    out: *mut f64,
) -> SglabStatus {
    out_ptr!(out);
    guard(|| {
        if !(n >= 1.0 && beta2 >= 0.0 && (0.0..=1.0).contains(&t1) && (0.0..=1.0).contains(&t2))
        {
            return fail(
                SglabStatus::InvalidParameter,
                "need N ≥ 1, β² ≥ 0 and times in [0, 1]",
            );
        }
        *out = sglab::chaos::chaos_two_point_analytic(n, beta2, (t1, [x1, y1]), (t2, [x2, y2]));
        SglabStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// A finished experiment report.
pub struct SglabReport {
    report: ExperimentReport,
    json: CString,
}

/// Bundled default config of a named experiment, as JSON. Free the result
/// with [`sglab_string_free`].
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_default_config(
    name: *const c_char,
    out: *mut *mut c_char,
) -> SglabStatus {
    out_ptr!(out);
    guard(|| {
        let name = match read_str(name) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match cli::registry().iter().find(|d| d.name == name) {
            Some(d) => give_string(d.default_config.to_string(), out),
            None => fail(SglabStatus::NotFound, format!("unknown experiment `{name}`")),
        }
    })
}

/// Newline-separated names of the registered experiments, sorted. Free the
/// result with [`sglab_string_free`].
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_experiment_names(out: *mut *mut c_char) -> SglabStatus {
    out_ptr!(out);
    guard(|| {
        let mut names: Vec<&str> = cli::registry().iter().map(|d| d.name).collect();
        names.sort_unstable();
        give_string(names.join("\n"), out)
    })
}

/// Run an experiment from a JSON config (merged over its bundled default).
/// `threads` = 0 uses the global pool. No files are written.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_run_experiment(
    config_json: *const c_char,
    threads: u32,
    out: *mut *mut SglabReport,
) -> SglabStatus {
    out_ptr!(out);
    guard(|| {
        let text = match read_str(config_json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let cfg = match ExperimentConfig::resolve(text) {
            Ok(c) => c,
            Err(e) => return lab(e),
        };
        let threads = (threads > 0).then_some(threads as usize);
        let report = match cli::run_with_threads(&cfg, threads) {
            Ok(r) => r,
            Err(e) => return lab(e),
        };
        let json = match serde_json::to_string(&report)
            .map_err(|e| e.to_string())
            .and_then(|s| CString::new(s).map_err(|e| e.to_string()))
        {
            Ok(j) => j,
            Err(e) => return fail(SglabStatus::Other, e),
        };
        *out = Box::into_raw(Box::new(SglabReport { report, json }));
        SglabStatus::Ok
    })
}

/// 1 when every pass flag of the report is true, 0 otherwise.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sglab_report_pass(report: *const SglabReport, out: *mut i32) -> SglabStatus {
    out_ptr!(out);
    match report.as_ref() {
        Some(r) => {
            *out = r.report.pass as i32;
            SglabStatus::Ok
        }
        None => fail(SglabStatus::NullPointer, "null report"),
    }
}

/// Number of metrics in the report.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sglab_report_metric_count(
    report: *const SglabReport,
    out: *mut usize,
) -> SglabStatus {
    out_ptr!(out);
    match report.as_ref() {
        Some(r) => {
            *out = r.report.metrics.len();
            SglabStatus::Ok
        }
        None => fail(SglabStatus::NullPointer, "null report"),
    }
}

/// Value of the metric called `name`; `NotFound` if there is none.
///
/// # Safety
/// `report` must be null or a live handle, `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sglab_report_metric(
    report: *const SglabReport,
    name: *const c_char,
    out: *mut f64,
) -> SglabStatus {
    out_ptr!(out);
    let Some(r) = report.as_ref() else {
        return fail(SglabStatus::NullPointer, "null report");
    };
    let name = match read_str(name) {
        Ok(s) => s,
        Err(s) => return s,
    };
    match r.report.metric(name) {
        Some(m) => {
            *out = m.value;
            SglabStatus::Ok
        }
        None => fail(SglabStatus::NotFound, format!("no metric `{name}`")),
    }
}

/// The full report as JSON. The string is owned by the handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sglab_report_json(report: *const SglabReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.json.as_ptr())
}

/// # Safety
/// `report` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sglab_report_free(report: *mut SglabReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

// ---------------------------------------------------------------------------
// Truncated flow
// ---------------------------------------------------------------------------

/// Truncated sine-Gordon flow started from Gaussian free-field data.
pub struct SglabFlow {
    state: FlowState,
}

/// Create a flow for cutoff `n`. With `hamiltonian` nonzero the damping and
/// noise are switched off. Initial data and noise are determined by
/// (`seed`, `sample`).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_flow_new(
    n: f64,
    beta2: f64,
    gamma: f64,
    hamiltonian: i32,
    seed: u64,
    sample: u64,
    out: *mut *mut SglabFlow,
) -> SglabStatus {
    out_ptr!(out);
    guard(|| {
        let build = || -> sglab::error::Result<FlowState> {
            let lat = FrequencyLattice::for_cutoff(n)?;
            let rc = compute_renorm_constants(&lat, n, beta2)?;
            let data = sample_gaussian_pair_indexed(&lat, seed, sample, None);
            let params = if hamiltonian != 0 {
                FlowParams::hamiltonian(gamma, beta2.sqrt())
            } else {
                FlowParams::new(gamma, beta2.sqrt())
            };
            FlowState::new(&data, &rc, params, seed, sample)
        };
        match build() {
            Ok(state) => {
                *out = Box::into_raw(Box::new(SglabFlow { state }));
                SglabStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

/// Advance by `steps` steps of size `dt` (dt ≤ min(1/8N, 5·10⁻³)).
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sglab_flow_step(flow: *mut SglabFlow, dt: f64, steps: u32) -> SglabStatus {
    let Some(f) = flow.as_mut() else {
        return fail(SglabStatus::NullPointer, "null flow");
    };
    guard(|| {
        for _ in 0..steps {
            if let Err(e) = step_flow(&mut f.state, dt) {
                return lab(e);
            }
        }
        SglabStatus::Ok
    })
}

/// Current time of the flow.
///
/// # Safety
/// `flow` must be null or a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_flow_time(flow: *const SglabFlow, out: *mut f64) -> SglabStatus {
    out_ptr!(out);
    match flow.as_ref() {
        Some(f) => {
            *out = f.state.time();
            SglabStatus::Ok
        }
        None => fail(SglabStatus::NullPointer, "null flow"),
    }
}

/// Fourier coefficient of Π_{≤N}u (or of ∂ₜu when `velocity` is nonzero)
/// at frequency (n1, n2); `NotFound` outside the truncation.
///
/// # Safety
/// `flow` must be null or a live handle; `re`, `im` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_flow_coefficient(
    flow: *const SglabFlow,
    n1: i64,
    n2: i64,
    velocity: i32,
    re: *mut f64,
    im: *mut f64,
) -> SglabStatus {
    out_ptr!(re);
    out_ptr!(im);
    let Some(f) = flow.as_ref() else {
        return fail(SglabStatus::NullPointer, "null flow");
    };
    match f.state.active_coeff((n1, n2), velocity != 0) {
        Some(c) => {
            *re = c.re;
            *im = c.im;
            SglabStatus::Ok
        }
        None => fail(
            SglabStatus::NotFound,
            format!("({n1}, {n2}) lies outside the truncation"),
        ),
    }
}

/// Truncated energy ½Σ(⟨n⟩²|û|² + |v̂|²) − R_N.
///
/// # Safety
/// `flow` must be null or a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sglab_flow_energy(flow: *mut SglabFlow, out: *mut f64) -> SglabStatus {
    out_ptr!(out);
    let Some(f) = flow.as_mut() else {
        return fail(SglabStatus::NullPointer, "null flow");
    };
    guard(|| match f.state.hamiltonian() {
        Ok(e) => {
            *out = e;
            SglabStatus::Ok
        }
        Err(e) => lab(e),
    })
}

/// # Safety
/// `flow` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sglab_flow_free(flow: *mut SglabFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}
