//! C ABI over the scatterflow solver.
//!
//! Objects are opaque handles created and released through paired
//! functions. Every fallible call returns an [`ScfStatus`]; the message of
//! the last failure on the calling thread is available from
//! [`scf_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use scatterflow::{Error, ProblemFile, RunStatus, Schedule, Solution, StateVector, SystemGraph};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Parse, coverage or parameter error.
    Validation = 3,
    /// Singular loop, non-invertible parametrization, non-finite state.
    Numerical = 4,
    /// Output buffer shorter than required.
    BufferTooSmall = 5,
    Panic = 6,
}

/// Termination of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScfRunStatus {
    Converged = 0,
    MaxIters = 1,
    Diverged = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScfMode {
    Synchronous = 0,
    Asynchronous = 1,
}

/// Solver options. Obtain defaults from [`scf_solve_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ScfSolveOptions {
    pub mode: ScfMode,
    /// Firing probability in asynchronous mode.
    pub p: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: u64,
}

/// Parsed problem.
pub struct ScfProblem(ProblemFile);

/// Assembled scattering system.
pub struct ScfSystem(SystemGraph);

/// Solver output.
pub struct ScfSolution {
    solution: Solution,
    state: StateVector,
    status: RunStatus,
    iterations: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> ScfStatus {
    match e.root() {
        Error::Derivation { source, .. } => status_of(source),
        Error::SingularLoop { .. }
        | Error::NonFiniteState { .. }
        | Error::SingularKkt
        | Error::NonInvertibleParametrization { .. } => ScfStatus::Numerical,
        _ => ScfStatus::Validation,
    }
}

fn fail(status: ScfStatus, msg: String) -> ScfStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ScfStatus, String)>) -> ScfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScfStatus::Ok,
        Ok(Err((s, msg))) => fail(s, msg),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(ScfStatus::Panic, msg)
        }
    }
}

fn model(e: Error) -> (ScfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ScfStatus, String) {
    (ScfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, cap: usize, len: *mut usize) -> Result<(), (ScfStatus, String)> {
    if len.is_null() {
        return Err(null("len"));
    }
    *len = src.len();
    if out.is_null() {
        // length query
        return Ok(());
    }
    if cap < src.len() {
        return Err((ScfStatus::BufferTooSmall, format!("need {} values, got room for {cap}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn scf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a problem from NUL-terminated TOML text.
///
/// # Safety
/// `text` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scf_problem_parse(text: *const c_char, out: *mut *mut ScfProblem) -> ScfStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let src = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| (ScfStatus::InvalidUtf8, e.to_string()))?;
        let pf = scatterflow::parse_problem_file(src).map_err(model)?;
        *out = Box::into_raw(Box::new(ScfProblem(pf)));
        Ok(())
    })
}

/// Number of global indices, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scf_problem_dim(problem: *const ScfProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.problem.n())
}

/// # Safety
/// `problem` must be null or a handle from [`scf_problem_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scf_problem_free(problem: *mut ScfProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Derives the scattering system. The problem handle stays owned by the caller.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scf_system_assemble(problem: *const ScfProblem, out: *mut *mut ScfSystem) -> ScfStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let sg = scatterflow::assemble(&p.0.problem, &p.0.convention).map_err(model)?;
        *out = Box::into_raw(Box::new(ScfSystem(sg)));
        Ok(())
    })
}

/// # Safety
/// `system` must be null or a handle from [`scf_system_assemble`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scf_system_free(system: *mut ScfSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

#[no_mangle]
pub extern "C" fn scf_solve_options_default() -> ScfSolveOptions {
    let s = Schedule::synchronous();
    ScfSolveOptions {
        mode: ScfMode::Synchronous,
        p: 0.5,
        seed: 0,
        tol: s.tol,
        max_iters: s.max_iters,
    }
}

/// Runs the executor from the zero state and recovers the solution.
/// A run that stops at the iteration cap or diverges still returns
/// `Ok` with a solution; inspect [`scf_solution_status`].
///
/// # Safety
/// `system` must be a live handle, `options` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn scf_system_solve(
    system: *const ScfSystem,
    options: *const ScfSolveOptions,
    out: *mut *mut ScfSolution,
) -> ScfStatus {
    guard(|| {
        let sg = &system.as_ref().ok_or_else(|| null("system"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let o = options.as_ref().copied().unwrap_or_else(|| scf_solve_options_default());
        let base = match o.mode {
            ScfMode::Synchronous => Schedule::synchronous(),
            ScfMode::Asynchronous => Schedule::asynchronous(o.p, o.seed),
        };
        let schedule = Schedule {
            seed: o.seed,
            tol: o.tol,
            max_iters: o.max_iters,
            ..base
        };
        let (state, trace) = scatterflow::run(sg, &schedule, None).map_err(model)?;
        let solution = scatterflow::recover(sg, &state).map_err(model)?;
        *out = Box::into_raw(Box::new(ScfSolution {
            solution,
            state,
            status: trace.status,
            iterations: trace.iterations(),
        }));
        Ok(())
    })
}

/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn scf_solution_status(solution: *const ScfSolution) -> ScfRunStatus {
    match solution.as_ref().map(|s| s.status) {
        Some(RunStatus::Converged) => ScfRunStatus::Converged,
        Some(RunStatus::MaxIters) => ScfRunStatus::MaxIters,
        _ => ScfRunStatus::Diverged,
    }
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scf_solution_iterations(solution: *const ScfSolution) -> u64 {
    solution.as_ref().map_or(0, |s| s.iterations)
}

/// Copies the primal vector `a★`. With `out` null only `*len` is written.
///
/// # Safety
/// `out` must have room for `cap` values; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scf_solution_primal(
    solution: *const ScfSolution,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> ScfStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_out(&s.solution.a_star, out, cap, len)
    })
}

/// Copies the dual vector `b★`. With `out` null only `*len` is written.
///
/// # Safety
/// As for [`scf_solution_primal`].
#[no_mangle]
pub unsafe extern "C" fn scf_solution_dual(
    solution: *const ScfSolution,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> ScfStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_out(&s.solution.b_star, out, cap, len)
    })
}

/// Copies the final wave state, `c` then `d`, each of length n.
///
/// # Safety
/// `c` and `d` must each have room for `cap` values; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scf_solution_waves(
    solution: *const ScfSolution,
    c: *mut f64,
    d: *mut f64,
    cap: usize,
    len: *mut usize,
) -> ScfStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_out(&s.state.c, c, cap, len)?;
        copy_out(&s.state.d, d, cap, len)
    })
}

/// Primal cost, dual cost and gap. Writes NaN when a block has no
/// recoverable cost.
///
/// # Safety
/// `solution` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn scf_solution_costs(
    solution: *const ScfSolution,
    primal: *mut f64,
    dual: *mut f64,
    gap: *mut f64,
) -> ScfStatus {
    guard(|| {
        let s = &solution.as_ref().ok_or_else(|| null("solution"))?.solution;
        for (dst, v) in [(primal, s.primal_cost), (dual, s.dual_cost), (gap, s.gap)] {
            if !dst.is_null() {
                *dst = v.unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}

/// Primal and dual LI feasibility residuals (∞-norm).
///
/// # Safety
/// `solution` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn scf_solution_residuals(
    solution: *const ScfSolution,
    primal: *mut f64,
    dual: *mut f64,
) -> ScfStatus {
    guard(|| {
        let s = &solution.as_ref().ok_or_else(|| null("solution"))?.solution;
        if !primal.is_null() {
            *primal = s.primal_residual;
        }
        if !dual.is_null() {
            *dual = s.dual_residual;
        }
        Ok(())
    })
}

/// # Safety
/// `solution` must be null or a handle from [`scf_system_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scf_solution_free(solution: *mut ScfSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}
