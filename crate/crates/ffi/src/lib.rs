//! C ABI for `contscp`.
//!
//! Problems and solutions are opaque handles created and released through
//! this API. Every fallible call returns a [`ContscpStatus`]; the message of
//! the most recent failure on the calling thread is available from
//! [`contscp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use contscp::experiments::{solve_file, SolveOutput};
use contscp::problem::config::ProblemFile;
use contscp::scp::ScpStatus;
use contscp::Error;

/// Result codes of the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContscpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed problem file or inconsistent settings.
    Config = 3,
    /// The solver reported a numerical failure.
    Numerical = 4,
    /// A caller buffer is too small; the required length was written.
    BufferTooSmall = 5,
    /// The requested quantity is not available for this solution.
    Unavailable = 6,
    Panic = 7,
}

/// Opaque parsed problem file.
pub struct ContscpProblem(ProblemFile);

/// Opaque solve result.
pub struct ContscpSolution(SolveOutput);

/// Pontryagin residuals of a solution, `NaN` where not computed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ContscpResiduals {
    pub adjoint_defect: f64,
    pub maximality_gap: f64,
    pub transversality_endpoint: f64,
    pub transversality_time: f64,
    pub nontriviality_margin: f64,
    pub boundary_residual: f64,
}

/// Scalar summary of a solution.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ContscpSummary {
    /// 1 when SCP converged or shooting succeeded.
    pub converged: i32,
    /// 1 when the last trust-region constraint was inactive.
    pub strict: i32,
    pub iterations: usize,
    pub final_time: f64,
    pub cost: f64,
    pub boundary_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> ContscpStatus {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Parse(_) | Error::Dimension { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => {
            ContscpStatus::Config
        }
        _ => ContscpStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), ContscpStatus>) -> ContscpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ContscpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            ContscpStatus::Panic
        }
    }
}

fn fail(e: Error) -> ContscpStatus {
    set_error(e.to_string());
    status_of(&e)
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, ContscpStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null pointer argument".into());
        ContscpStatus::NullPointer
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn contscp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn contscp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse a TOML problem description.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn contscp_problem_from_toml(toml: *const c_char, out: *mut *mut ContscpProblem) -> ContscpStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            set_error("null pointer argument".into());
            return Err(ContscpStatus::NullPointer);
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(toml).to_str().map_err(|e| {
            set_error(e.to_string());
            ContscpStatus::InvalidUtf8
        })?;
        let file = ProblemFile::parse(text).map_err(fail)?;
        file.build().map_err(fail)?;
        *out = Box::into_raw(Box::new(ContscpProblem(file)));
        Ok(())
    })
}

/// Release a problem; null is ignored.
///
/// # Safety
/// `problem` must come from [`contscp_problem_from_toml`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn contscp_problem_free(problem: *mut ContscpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of states and controls of a problem.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn contscp_problem_dims(problem: *const ContscpProblem, states: *mut usize, controls: *mut usize) -> ContscpStatus {
    guard(|| {
        let p = deref(problem)?;
        if states.is_null() || controls.is_null() {
            return Err(ContscpStatus::NullPointer);
        }
        let built = p.0.build().map_err(fail)?;
        *states = built.problem.state_dim();
        *controls = built.problem.control_dim();
        Ok(())
    })
}

/// Run SCP (or shooting-accelerated SCP when enabled in the file).
///
/// A non-converged run still yields a solution; inspect its summary.
///
/// # Safety
/// `problem` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn contscp_solve(problem: *const ContscpProblem, out: *mut *mut ContscpSolution) -> ContscpStatus {
    guard(|| {
        let p = deref(problem)?;
        if out.is_null() {
            return Err(ContscpStatus::NullPointer);
        }
        *out = ptr::null_mut();
        let solved = solve_file(&p.0).map_err(fail)?;
        *out = Box::into_raw(Box::new(ContscpSolution(solved)));
        Ok(())
    })
}

/// Release a solution; null is ignored.
///
/// # Safety
/// `solution` must come from [`contscp_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn contscp_solution_free(solution: *mut ContscpSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn contscp_solution_summary(solution: *const ContscpSolution, out: *mut ContscpSummary) -> ContscpStatus {
    guard(|| {
        let s = &deref(solution)?.0;
        let out = out.as_mut().ok_or(ContscpStatus::NullPointer)?;
        let r = &s.report;
        *out = ContscpSummary {
            converged: (r.status == ScpStatus::Converged || s.shooting.is_some()) as i32,
            strict: r.strict as i32,
            iterations: r.iterations,
            final_time: r.final_time,
            cost: r.cost,
            boundary_residual: r.boundary_residual,
        };
        Ok(())
    })
}

/// Pontryagin residuals; `Unavailable` when the run did not converge.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn contscp_solution_residuals(solution: *const ContscpSolution, out: *mut ContscpResiduals) -> ContscpStatus {
    guard(|| {
        let s = &deref(solution)?.0;
        let out = out.as_mut().ok_or(ContscpStatus::NullPointer)?;
        let Some(r) = s.report.pmp else {
            set_error("no residuals: the run did not converge".into());
            return Err(ContscpStatus::Unavailable);
        };
        *out = ContscpResiduals {
            adjoint_defect: r.adjoint_defect,
            maximality_gap: r.maximality_gap,
            transversality_endpoint: r.transversality_endpoint,
            transversality_time: r.transversality_time,
            nontriviality_margin: r.nontriviality_margin,
            boundary_residual: r.boundary_residual,
        };
        Ok(())
    })
}

/// Shape of the trajectory table: columns are `s_tilde, t`, the states,
/// the controls and, when available, one costate per state.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn contscp_solution_table_shape(solution: *const ContscpSolution, rows: *mut usize, cols: *mut usize) -> ContscpStatus {
    guard(|| {
        let s = &deref(solution)?.0;
        if rows.is_null() || cols.is_null() {
            return Err(ContscpStatus::NullPointer);
        }
        let t = s.table();
        *rows = t.values.nrows();
        *cols = t.values.ncols();
        Ok(())
    })
}

/// Copy the trajectory table row-major into `buf` of `len` doubles. On
/// `BufferTooSmall` the required length is written to `needed` (if non-null).
///
/// # Safety
/// `buf` must hold `len` doubles; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn contscp_solution_table(solution: *const ContscpSolution, buf: *mut f64, len: usize, needed: *mut usize) -> ContscpStatus {
    guard(|| {
        let s = &deref(solution)?.0;
        let t = s.table();
        let total = t.values.len();
        if let Some(n) = needed.as_mut() {
            *n = total;
        }
        if len < total {
            set_error(format!("buffer holds {len} values, {total} needed"));
            return Err(ContscpStatus::BufferTooSmall);
        }
        if buf.is_null() {
            return Err(ContscpStatus::NullPointer);
        }
        let out = std::slice::from_raw_parts_mut(buf, total);
        let cols = t.values.ncols();
        for (r, row) in t.values.row_iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[r * cols + c] = *v;
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LQR: &str = "family = \"lqr\"\n[lqr]\na = [[0.0, 1.0], [0.0, 0.0]]\nb = [[0.0], [1.0]]\nx0 = [0.0, 0.0]\nxf = [1.0, 0.0]\ntf = 1.0\n\0";

    fn last_error() -> String {
        unsafe { CStr::from_ptr(contscp_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn lqr_round_trip_through_the_c_api() {
        unsafe {
            let mut problem = ptr::null_mut();
            assert_eq!(contscp_problem_from_toml(LQR.as_ptr().cast(), &mut problem), ContscpStatus::Ok);
            let (mut n, mut m) = (0, 0);
            assert_eq!(contscp_problem_dims(problem, &mut n, &mut m), ContscpStatus::Ok);
            assert_eq!((n, m), (2, 1));

            let mut sol = ptr::null_mut();
            assert_eq!(contscp_solve(problem, &mut sol), ContscpStatus::Ok);
            let mut summary = std::mem::zeroed::<ContscpSummary>();
            assert_eq!(contscp_solution_summary(sol, &mut summary), ContscpStatus::Ok);
            assert_eq!(summary.converged, 1);
            assert!((summary.cost - 12.0).abs() < 0.1, "{summary:?}");
            let mut res = std::mem::zeroed::<ContscpResiduals>();
            assert_eq!(contscp_solution_residuals(sol, &mut res), ContscpStatus::Ok);
            assert!(res.boundary_residual < 1e-8);

            let (mut rows, mut cols) = (0, 0);
            assert_eq!(contscp_solution_table_shape(sol, &mut rows, &mut cols), ContscpStatus::Ok);
            assert_eq!((rows, cols), (51, 7));
            let mut needed = 0;
            let mut small = vec![0.0; 3];
            assert_eq!(contscp_solution_table(sol, small.as_mut_ptr(), 3, &mut needed), ContscpStatus::BufferTooSmall);
            assert_eq!(needed, rows * cols);
            let mut buf = vec![0.0; needed];
            assert_eq!(contscp_solution_table(sol, buf.as_mut_ptr(), needed, ptr::null_mut()), ContscpStatus::Ok);
            let last = &buf[(rows - 1) * cols..];
            assert_eq!(last[1], 1.0);
            assert!((last[2] - 1.0).abs() < 1e-8 && last[3].abs() < 1e-8);

            contscp_solution_free(sol);
            contscp_problem_free(problem);
        }
    }

    #[test]
    fn errors_are_codes_with_messages() {
        unsafe {
            let mut problem = ptr::null_mut();
            assert_eq!(contscp_problem_from_toml(ptr::null(), &mut problem), ContscpStatus::NullPointer);
            assert_eq!(contscp_problem_from_toml(c"family = 1".as_ptr(), &mut problem), ContscpStatus::Config);
            assert!(problem.is_null());
            assert!(last_error().contains("parse"), "{}", last_error());
            assert_eq!(contscp_problem_from_toml(c"family = \"lqr\"".as_ptr(), &mut problem), ContscpStatus::Config);
            assert!(last_error().contains("[lqr]"));
            let bad = [0xffu8, 0];
            assert_eq!(contscp_problem_from_toml(bad.as_ptr().cast(), &mut problem), ContscpStatus::InvalidUtf8);
            let mut summary = std::mem::zeroed::<ContscpSummary>();
            assert_eq!(contscp_solution_summary(ptr::null(), &mut summary), ContscpStatus::NullPointer);
            contscp_problem_free(ptr::null_mut());
            contscp_solution_free(ptr::null_mut());
        }
        let v = unsafe { CStr::from_ptr(contscp_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
