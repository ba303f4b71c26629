//! C ABI over `subneumann`.
//!
//! Handles are opaque pointers created by `sn_*_new`/`sn_solve`/`sn_verify`
//! and released by the matching `sn_*_free`. Every call returns an
//! [`SnStatus`]; on failure `sn_last_error` holds a message for the calling
//! thread. Strings are UTF-8 and NUL-terminated. Indices are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use subneumann::config::{RunConfig, Setup};
use subneumann::solver::{apriori_estimate_ratio, solve, Solution};
use subneumann::verify::{parse_suite, run_suite, VerifyReport};
use subneumann::Error;

/// Status codes; the nonzero values below 6 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnStatus {
    Ok = 0,
    Failed = 1,
    Config = 2,
    IncompatibleData = 3,
    NotConverged = 4,
    CheckFailure = 5,
    NullPointer = 6,
    InvalidUtf8 = 7,
    BufferTooSmall = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// A configured Neumann problem.
pub struct SnProblem {
    cfg: RunConfig,
    setup: Setup,
}

/// A computed minimizer.
pub struct SnSolution {
    sol: Solution,
    c_emp: f64,
}

/// Outcome of a check suite.
pub struct SnReport {
    report: VerifyReport,
    json: Vec<u8>,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut v = msg.as_bytes().to_vec();
        v.retain(|&b| b != 0);
        *e.borrow_mut() = v;
    });
}

fn status_of(e: &Error) -> SnStatus {
    match e.exit_code() {
        2 => SnStatus::Config,
        3 => SnStatus::IncompatibleData,
        4 => SnStatus::NotConverged,
        _ => SnStatus::Failed,
    }
}

fn fail(e: Error) -> SnStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn guard(f: impl FnOnce() -> SnStatus) -> SnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            SnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, SnStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(SnStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not UTF-8");
        SnStatus::InvalidUtf8
    })
}

/// Copies `bytes` plus a NUL into `buf` when it fits; `needed` receives the
/// full size including the NUL.
unsafe fn copy_out(bytes: &[u8], buf: *mut c_char, cap: usize, needed: *mut usize) -> SnStatus {
    if !needed.is_null() {
        *needed = bytes.len() + 1;
    }
    if buf.is_null() || cap < bytes.len() + 1 {
        return SnStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    SnStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread. `*needed` receives the
/// size including the NUL; returns `BufferTooSmall` if `cap` is short.
///
/// # Safety
/// `buf` must be writable for `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn sn_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> SnStatus {
    LAST_ERROR.with(|e| copy_out(&e.borrow(), buf, cap, needed))
}

/// Builds a problem from TOML text. `base_dir` (nullable) resolves relative
/// CSV paths; `seed_override` < 0 keeps the configured seed.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_problem_new(
    toml: *const c_char,
    base_dir: *const c_char,
    seed_override: i64,
    out: *mut *mut SnProblem,
) -> SnStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output handle");
            return SnStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let text = match str_arg(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let base = if base_dir.is_null() {
            ".".to_string()
        } else {
            match str_arg(base_dir) {
                Ok(b) => b.to_string(),
                Err(s) => return s,
            }
        };
        let mut cfg = match RunConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        if seed_override >= 0 {
            cfg.seed = seed_override as u64;
        }
        cfg.resolve_paths(Path::new(&base));
        match cfg.setup(Path::new(&base)) {
            Ok(setup) => {
                *out = Box::into_raw(Box::new(SnProblem { cfg, setup }));
                SnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `p` must come from `sn_problem_new` (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sn_problem_free(p: *mut SnProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Ambient dimension and node count.
///
/// # Safety
/// `p` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_problem_shape(p: *const SnProblem, dim: *mut usize, nodes: *mut usize) -> SnStatus {
    guard(|| {
        if p.is_null() || dim.is_null() || nodes.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        let d = &(*p).setup.dom;
        *dim = d.dim();
        *nodes = d.num_nodes();
        SnStatus::Ok
    })
}

/// Coordinates of all nodes, row-major `nodes × dim`.
///
/// # Safety
/// `out` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sn_problem_nodes(p: *const SnProblem, out: *mut f64, len: usize) -> SnStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        let d = &(*p).setup.dom;
        let need = d.num_nodes() * d.dim();
        if len < need {
            set_error(&format!("node buffer needs {need} doubles"));
            return SnStatus::BufferTooSmall;
        }
        for i in 0..d.num_nodes() {
            ptr::copy_nonoverlapping(d.node(i).as_ptr(), out.add(i * d.dim()), d.dim());
        }
        SnStatus::Ok
    })
}

/// `<nu, 1> - ∫ f`.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_problem_compatibility(p: *const SnProblem, out: *mut f64) -> SnStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        *out = (*p).setup.prob.compat();
        SnStatus::Ok
    })
}

/// Minimizes the energy with the configured solver options.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_solve(p: *const SnProblem, out: *mut *mut SnSolution) -> SnStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let pr = &*p;
        let sol = match solve(&pr.setup.prob, &pr.cfg.solve_options()) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let c_emp = match apriori_estimate_ratio(&pr.setup.prob, &sol) {
            Ok(a) => a.ratio,
            Err(e) => return fail(e),
        };
        *out = Box::into_raw(Box::new(SnSolution { sol, c_emp }));
        SnStatus::Ok
    })
}

/// # Safety
/// `s` must come from `sn_solve` (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sn_solution_free(s: *mut SnSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Scalar summary of a solution.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SnSolveInfo {
    pub energy: f64,
    pub grad_norm: f64,
    pub tolerance: f64,
    pub c_emp: f64,
    pub delta_final: f64,
    pub iterations: usize,
    pub converged: c_int,
}

/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_solution_info(s: *const SnSolution, out: *mut SnSolveInfo) -> SnStatus {
    guard(|| {
        if s.is_null() || out.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        let s = &*s;
        *out = SnSolveInfo {
            energy: s.sol.j,
            grad_norm: s.sol.grad_norm,
            tolerance: s.sol.tolerance,
            c_emp: s.c_emp,
            delta_final: s.sol.delta_final,
            iterations: s.sol.iterations,
            converged: c_int::from(s.sol.converged),
        };
        SnStatus::Ok
    })
}

/// Nodal values of the minimizer (one per node).
///
/// # Safety
/// `out` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sn_solution_values(s: *const SnSolution, out: *mut f64, len: usize) -> SnStatus {
    guard(|| {
        if s.is_null() || out.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        let v = (*s).sol.u.values();
        if len < v.len() {
            set_error(&format!("value buffer needs {} doubles", v.len()));
            return SnStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        SnStatus::Ok
    })
}

/// Runs a check suite: `suite` is a comma-separated list, null for the
/// configured suite. Returns `CheckFailure` (with `*out` set) when a check
/// fails.
///
/// # Safety
/// `p` must be a live handle; `suite` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_verify(p: *const SnProblem, suite: *const c_char, out: *mut *mut SnReport) -> SnStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let pr = &*p;
        let names = if suite.is_null() {
            pr.cfg.verify.suite_names()
        } else {
            match str_arg(suite).map(parse_suite) {
                Ok(Ok(n)) => n,
                Ok(Err(e)) => return fail(e),
                Err(s) => return s,
            }
        };
        let report = match run_suite(&pr.setup.prob, &pr.cfg.solve_options(), &names, &pr.cfg.suite_settings()) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let json = match serde_json::to_vec_pretty(&report) {
            Ok(j) => j,
            Err(e) => {
                set_error(&e.to_string());
                return SnStatus::Failed;
            }
        };
        let pass = report.pass;
        *out = Box::into_raw(Box::new(SnReport { report, json }));
        if pass {
            SnStatus::Ok
        } else {
            set_error("one or more checks failed");
            SnStatus::CheckFailure
        }
    })
}

/// # Safety
/// `r` must come from `sn_verify` (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sn_report_free(r: *mut SnReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of checks and number that passed.
///
/// # Safety
/// `r` must be a live handle; output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn sn_report_counts(r: *const SnReport, total: *mut usize, passed: *mut usize) -> SnStatus {
    guard(|| {
        if r.is_null() || total.is_null() || passed.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        let rep = &(*r).report;
        *total = rep.checks.len();
        *passed = rep.checks.iter().filter(|c| c.pass).count();
        SnStatus::Ok
    })
}

/// Pass flag of check `index` (0-based): 1 pass, 0 fail.
///
/// # Safety
/// `r` must be a live handle and `pass` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_report_check(r: *const SnReport, index: usize, pass: *mut c_int) -> SnStatus {
    guard(|| {
        if r.is_null() || pass.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        let rep = &*r;
        match rep.report.checks.get(index) {
            Some(c) => {
                *pass = c_int::from(c.pass);
                SnStatus::Ok
            }
            None => {
                set_error(&format!("check index {index} out of range"));
                SnStatus::OutOfRange
            }
        }
    })
}

/// JSON rendering of the report (same body as the CLI writes); buffer
/// rules as for `sn_last_error`.
///
/// # Safety
/// `buf` writable for `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn sn_report_json(r: *const SnReport, buf: *mut c_char, cap: usize, needed: *mut usize) -> SnStatus {
    guard(|| {
        if r.is_null() {
            set_error("null argument");
            return SnStatus::NullPointer;
        }
        copy_out(&(*r).json, buf, cap, needed)
    })
}
