//! C ABI over the csvl library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by the matching `*_free`. Every fallible call returns a
//! [`CsvlStatus`]; the message of the last failure on the calling thread is
//! available from [`csvl_last_error`]. Panics are caught and reported as
//! [`CsvlStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use csvl::config::ExperimentConfig;
use csvl::error::Error;
use csvl::functionals::{d_of_q, ReducedConfig};
use csvl::green::{GreenEvaluator, VortexConfig};
use csvl::higgs;
use csvl::solver::{maximal_solution, Equation, MonotoneOptions, SolveReport};
use csvl::torus::{Field, TorusDomain};

/// Status codes. The numeric values follow the command-line exit codes
/// where they overlap.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DomainError = 3,
    LimitUnstable = 4,
    ReducedInfeasible = 5,
    NonConvergence = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Flat torus with its grid.
pub struct CsvlTorus {
    domain: TorusDomain,
}

/// Green function on a torus together with a vortex configuration.
pub struct CsvlGreen {
    domain: TorusDomain,
    g: GreenEvaluator,
    cfg: VortexConfig,
}

/// Parsed experiment config.
pub struct CsvlConfig {
    cfg: ExperimentConfig,
}

/// A converged solve: the smooth part `phi` and its diagnostics.
pub struct CsvlSolution {
    phi: Field,
    report: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut v = e.borrow_mut();
        v.clear();
        v.extend(msg.bytes().filter(|b| *b != 0));
    });
}

fn status_of(e: &Error) -> CsvlStatus {
    match e {
        Error::Io(_) => CsvlStatus::Io,
        Error::Config { .. } | Error::Format(_) | Error::InvalidArgument(_) => CsvlStatus::InvalidArgument,
        Error::SingularPoint(_) | Error::NonzeroMean { .. } | Error::InvalidConfiguration(_) | Error::AnsatzInfeasible { .. } => {
            CsvlStatus::DomainError
        }
        Error::LimitUnstable { .. } | Error::SearchFailure { .. } | Error::ProjectionDegenerate { .. } => CsvlStatus::LimitUnstable,
        Error::ReducedInfeasible { .. } => CsvlStatus::ReducedInfeasible,
        Error::OutOfBranch { .. }
        | Error::IterationFailure(_)
        | Error::LinearSolveFailure { .. }
        | Error::NonConvergence { .. }
        | Error::NoSolution(_) => CsvlStatus::NonConvergence,
    }
}

struct Fail(CsvlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CsvlStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsvlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsvlStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CsvlStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

/// Copy the last error message of this thread into `buf` (NUL terminated)
/// and return its length without the terminator. With `buf` null or `len`
/// too small nothing is written; the return value is the size needed.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn csvl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > msg.len() {
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
                *buf.add(msg.len()) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn csvl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `v = F^{-1}(u)` on the branch `v <= 0`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csvl_f_inverse(u: f64, out: *mut f64) -> CsvlStatus {
    guard(|| {
        let o = unsafe { out_ref(out, "out") }?;
        *o = higgs::f_inverse(u)?;
        Ok(())
    })
}

/// Torus `[0, l1) x [0, l2)` with an `n x n` grid offset by half a cell.
///
/// # Safety
/// `out` must be valid for one write. The handle is released with
/// [`csvl_torus_free`].
#[no_mangle]
pub unsafe extern "C" fn csvl_torus_new(l1: f64, l2: f64, n: usize, out: *mut *mut CsvlTorus) -> CsvlStatus {
    guard(|| {
        let o = unsafe { out_ref(out, "out") }?;
        *o = ptr::null_mut();
        let domain = TorusDomain::new(l1, l2, n, [0.5, 0.5])?;
        *o = Box::into_raw(Box::new(CsvlTorus { domain }));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from [`csvl_torus_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csvl_torus_free(t: *mut CsvlTorus) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Green function with `count` vortex points given as `xy[2i], xy[2i+1]`
/// and multiplicities `mult[i]` (null means all 1).
///
/// # Safety
/// `torus` must be a live handle, `xy` valid for `2 count` reads, `mult`
/// null or valid for `count` reads, `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csvl_green_new(
    torus: *const CsvlTorus,
    xy: *const f64,
    mult: *const u32,
    count: usize,
    out: *mut *mut CsvlGreen,
) -> CsvlStatus {
    guard(|| {
        let o = unsafe { out_ref(out, "out") }?;
        *o = ptr::null_mut();
        let t = unsafe { handle(torus, "torus") }?;
        if xy.is_null() && count > 0 {
            return Err(null("xy"));
        }
        let coords = if count == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(xy, 2 * count) } };
        let points = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let mults = if mult.is_null() { vec![1; count] } else { unsafe { std::slice::from_raw_parts(mult, count) }.to_vec() };
        let cfg = VortexConfig::new(&t.domain, points, mults)?;
        let g = GreenEvaluator::new(&t.domain);
        *o = Box::into_raw(Box::new(CsvlGreen { domain: t.domain.clone(), g, cfg }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live handle from [`csvl_green_new`].
#[no_mangle]
pub unsafe extern "C" fn csvl_green_free(h: *mut CsvlGreen) {
    if !h.is_null() {
        drop(unsafe { Box::from_raw(h) });
    }
}

/// `G(x, y)`; coincident points give [`CsvlStatus::DomainError`].
///
/// # Safety
/// `h` must be a live handle, `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csvl_green_eval(h: *const CsvlGreen, x0: f64, x1: f64, y0: f64, y1: f64, out: *mut f64) -> CsvlStatus {
    guard(|| {
        let h = unsafe { handle(h, "green") }?;
        let o = unsafe { out_ref(out, "out") }?;
        *o = h.g.green([x0, x1], [y0, y1])?;
        Ok(())
    })
}

/// `u0(x)` for the handle's vortex configuration.
///
/// # Safety
/// `h` must be a live handle, `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csvl_green_u0(h: *const CsvlGreen, x0: f64, x1: f64, out: *mut f64) -> CsvlStatus {
    guard(|| {
        let h = unsafe { handle(h, "green") }?;
        let o = unsafe { out_ref(out, "out") }?;
        *o = h.g.u0(&h.cfg, [x0, x1])?;
        Ok(())
    })
}

/// `D(q)` at `k` centers `q[2i], q[2i+1]` (Voronoi partition).
///
/// # Safety
/// `h` must be a live handle, `q` valid for `2 k` reads, `out` valid for
/// one write.
#[no_mangle]
pub unsafe extern "C" fn csvl_d_of_q(h: *const CsvlGreen, q: *const f64, k: usize, out: *mut f64) -> CsvlStatus {
    guard(|| {
        let h = unsafe { handle(h, "green") }?;
        let o = unsafe { out_ref(out, "out") }?;
        if q.is_null() || k == 0 {
            return Err(Fail(CsvlStatus::InvalidArgument, "need at least one center".into()));
        }
        let pts: Vec<_> = unsafe { std::slice::from_raw_parts(q, 2 * k) }.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let rc = ReducedConfig::voronoi(h.domain.periods(), &pts);
        *o = d_of_q(&h.g, &h.cfg, &rc)?.value;
        Ok(())
    })
}

/// Parse an experiment config from NUL-terminated UTF-8 text.
///
/// # Safety
/// `text` must be a valid C string, `out` valid for one write. Release with
/// [`csvl_config_free`].
#[no_mangle]
pub unsafe extern "C" fn csvl_config_parse(text: *const c_char, out: *mut *mut CsvlConfig) -> CsvlStatus {
    guard(|| {
        let o = unsafe { out_ref(out, "out") }?;
        *o = ptr::null_mut();
        if text.is_null() {
            return Err(null("text"));
        }
        let s = unsafe { CStr::from_ptr(text) }
            .to_str()
            .map_err(|_| Fail(CsvlStatus::InvalidArgument, "config text is not UTF-8".into()))?;
        *o = Box::into_raw(Box::new(CsvlConfig { cfg: ExperimentConfig::parse(s)? }));
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a live handle from [`csvl_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn csvl_config_free(c: *mut CsvlConfig) {
    if !c.is_null() {
        drop(unsafe { Box::from_raw(c) });
    }
}

/// Write the 64-character hex config hash plus a NUL into `buf`, which
/// must hold at least 65 bytes.
///
/// # Safety
/// `c` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn csvl_config_hash(c: *const CsvlConfig, buf: *mut c_char, len: usize) -> CsvlStatus {
    guard(|| {
        let c = unsafe { handle(c, "config") }?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let h = c.cfg.hash();
        if len <= h.len() {
            return Err(Fail(CsvlStatus::BufferTooSmall, format!("hash needs {} bytes", h.len() + 1)));
        }
        unsafe {
            ptr::copy_nonoverlapping(h.as_ptr(), buf.cast::<u8>(), h.len());
            *buf.add(h.len()) = 0;
        }
        Ok(())
    })
}

/// Maximal (topological) solution at `eps`.
///
/// # Safety
/// `h` must be a live handle, `out` valid for one write. Release with
/// [`csvl_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn csvl_solve_maximal(h: *const CsvlGreen, eps: f64, out: *mut *mut CsvlSolution) -> CsvlStatus {
    guard(|| {
        let o = unsafe { out_ref(out, "out") }?;
        *o = ptr::null_mut();
        let h = unsafe { handle(h, "green") }?;
        let eq = Equation::new(&h.g, &h.cfg, &h.domain, eps)?;
        let (report, phi) = maximal_solution(&eq, MonotoneOptions::default())?;
        *o = Box::into_raw(Box::new(CsvlSolution { phi, report }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle from a solve call.
#[no_mangle]
pub unsafe extern "C" fn csvl_solution_free(s: *mut CsvlSolution) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Scalar diagnostics of a solution.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CsvlSolveSummary {
    pub eps: f64,
    pub sup_v: f64,
    pub grid_max_v: f64,
    pub mean_u: f64,
    pub flux_defect: f64,
    pub final_residual: f64,
    pub newton_iterations: usize,
}

/// # Safety
/// `s` must be a live handle, `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csvl_solution_summary(s: *const CsvlSolution, out: *mut CsvlSolveSummary) -> CsvlStatus {
    guard(|| {
        let s = unsafe { handle(s, "solution") }?;
        let o = unsafe { out_ref(out, "out") }?;
        let r = &s.report;
        *o = CsvlSolveSummary {
            eps: r.eps,
            sup_v: r.sup_v,
            grid_max_v: r.grid_max_v,
            mean_u: r.mean_u,
            flux_defect: r.flux_defect,
            final_residual: r.newton_trace.last().copied().unwrap_or(f64::NAN),
            newton_iterations: r.newton_trace.len().saturating_sub(1),
        };
        Ok(())
    })
}

/// Copy the `n*n` grid values of `phi` (row-major) into `buf`.
///
/// # Safety
/// `s` must be a live handle, `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn csvl_solution_phi(s: *const CsvlSolution, buf: *mut f64, len: usize) -> CsvlStatus {
    guard(|| {
        let s = unsafe { handle(s, "solution") }?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = &s.phi.values;
        if len < v.len() {
            return Err(Fail(CsvlStatus::BufferTooSmall, format!("phi needs {} values", v.len())));
        }
        unsafe { ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len()) };
        Ok(())
    })
}
