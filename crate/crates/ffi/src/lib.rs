//! C ABI for `onebit-crq`.
//!
//! Every fallible function returns a [`CrqStatus`]; on failure the message is
//! available from [`crq_last_error_message`] on the same thread. Model
//! parameters live behind the opaque [`CrqParams`] handle. Matrices are
//! row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crq::precoder::{self, CrqOptions};
use crq::simulation::{self, SystemConfig};
use crq::state_evolution::{self, ModelParams};
use crq::CrqError;
use ndarray::{ArrayView1, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    Dimension = 3,
    NonConvergence = 4,
    BracketFailure = 5,
    Divergence = 6,
    DegenerateLambda = 7,
    Panic = 8,
}

impl From<&CrqError> for CrqStatus {
    fn from(e: &CrqError) -> Self {
        match e {
            CrqError::InvalidParams(_) => CrqStatus::InvalidParams,
            CrqError::Dimension(_) => CrqStatus::Dimension,
            CrqError::NonConvergence { .. } => CrqStatus::NonConvergence,
            CrqError::BracketFailure(_) => CrqStatus::BracketFailure,
            CrqError::Divergence { .. } => CrqStatus::Divergence,
            CrqError::DegenerateLambda => CrqStatus::DegenerateLambda,
            CrqError::Trial { source, .. } => CrqStatus::from(source.as_ref()),
        }
    }
}

/// Opaque model parameters `(delta, rho, lambda, sigma2)`.
pub struct CrqParams {
    inner: ModelParams,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CrqFixedPoint {
    pub tau2: f64,
    pub gamma: f64,
    pub a: f64,
    pub residual_tau2: f64,
    pub residual_gamma: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CrqCharacterization {
    pub a_star: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub snr_bar: f64,
    pub sep: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CrqPrecodeInfo {
    pub a_hat: f64,
    pub objective: f64,
    pub inner_iters: usize,
    pub outer_evals: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CrqMcSummary {
    pub sep_hat: f64,
    pub sep_ci: f64,
    pub sep_theory: f64,
    pub alpha_hat: f64,
    pub alpha_stderr: f64,
    pub var_hat: f64,
    pub var_stderr: f64,
    pub trials: u64,
    pub errors: u64,
    pub symbols: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CrqStatus, msg: impl Into<String>) -> CrqStatus {
    set_error(msg.into());
    status
}

fn guard<F: FnOnce() -> Result<(), CrqStatus>>(f: F) -> CrqStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrqStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CrqStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn lift<T>(r: crq::Result<T>) -> Result<T, CrqStatus> {
    r.map_err(|e| fail(CrqStatus::from(&e), e.to_string()))
}

unsafe fn params_ref<'a>(p: *const CrqParams) -> Result<&'a ModelParams, CrqStatus> {
    p.as_ref()
        .map(|p| &p.inner)
        .ok_or_else(|| fail(CrqStatus::NullPointer, "params handle is null"))
}

fn check_out<T>(p: *mut T, name: &str) -> Result<(), CrqStatus> {
    if p.is_null() {
        Err(fail(CrqStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn crq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn crq_status_name(status: CrqStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        CrqStatus::Ok => b"ok\0",
        CrqStatus::NullPointer => b"null pointer\0",
        CrqStatus::InvalidParams => b"invalid parameters\0",
        CrqStatus::Dimension => b"dimension mismatch\0",
        CrqStatus::NonConvergence => b"non-convergence\0",
        CrqStatus::BracketFailure => b"bracket failure\0",
        CrqStatus::Divergence => b"divergence\0",
        CrqStatus::DegenerateLambda => b"degenerate lambda\0",
        CrqStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn crq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a parameter handle. `rho = 0` selects the small-rho continuation.
///
/// # Safety
/// `out` must be a valid pointer; the handle must be released with
/// [`crq_params_free`].
#[no_mangle]
pub unsafe extern "C" fn crq_params_new(
    delta: f64,
    rho: f64,
    lambda: f64,
    sigma2: f64,
    out: *mut *mut CrqParams,
) -> CrqStatus {
    guard(|| {
        check_out(out, "out")?;
        let inner = lift(ModelParams::new(delta, rho, lambda, sigma2))?;
        *out = Box::into_raw(Box::new(CrqParams { inner }));
        Ok(())
    })
}

/// Creates the SQUID preset `rho = 0`, `lambda = sigma2 K / N` for a
/// `K x N` system.
///
/// # Safety
/// As for [`crq_params_new`].
#[no_mangle]
pub unsafe extern "C" fn crq_params_new_squid(
    n: usize,
    k: usize,
    sigma2: f64,
    out: *mut *mut CrqParams,
) -> CrqStatus {
    guard(|| {
        check_out(out, "out")?;
        let inner = lift(precoder::squid_preset(n, k, sigma2))?;
        *out = Box::into_raw(Box::new(CrqParams { inner }));
        Ok(())
    })
}

/// Releases a handle from [`crq_params_new`]. NULL is ignored.
///
/// # Safety
/// `p` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crq_params_free(p: *mut CrqParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Solves the scalar fixed point `(tau^2, gamma)` at box level `a`.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crq_solve_fixed_point(
    params: *const CrqParams,
    a: f64,
    out: *mut CrqFixedPoint,
) -> CrqStatus {
    guard(|| {
        let p = params_ref(params)?;
        check_out(out, "out")?;
        let fp = lift(state_evolution::solve_fixed_point(a, p))?;
        *out = CrqFixedPoint {
            tau2: fp.tau2,
            gamma: fp.gamma,
            a: fp.a,
            residual_tau2: fp.residuals.0,
            residual_gamma: fp.residuals.1,
        };
        Ok(())
    })
}

/// Asymptotic risk `f(a)`.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crq_risk(params: *const CrqParams, a: f64, out: *mut f64) -> CrqStatus {
    guard(|| {
        let p = params_ref(params)?;
        check_out(out, "out")?;
        *out = lift(state_evolution::risk_f(a, p))?;
        Ok(())
    })
}

/// Minimizer `a*` of the asymptotic risk.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crq_minimize_risk(params: *const CrqParams, out: *mut f64) -> CrqStatus {
    guard(|| {
        let p = params_ref(params)?;
        check_out(out, "out")?;
        *out = lift(state_evolution::minimize_risk(p))?;
        Ok(())
    })
}

/// Full asymptotic characterization including the SEP prediction.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crq_characterize(
    params: *const CrqParams,
    out: *mut CrqCharacterization,
) -> CrqStatus {
    guard(|| {
        let p = params_ref(params)?;
        check_out(out, "out")?;
        let c = lift(state_evolution::characterize(p))?;
        *out = CrqCharacterization {
            a_star: c.a_star,
            tau2: c.fp_star.tau2,
            gamma: c.fp_star.gamma,
            alpha_bar: c.alpha_bar,
            beta_bar: c.beta_bar,
            snr_bar: c.snr_bar,
            sep: c.sep,
        };
        Ok(())
    })
}

/// CRQ precoding of `s` (length `k`) through the row-major `k x n` channel
/// `h`. Writes the relaxed solution to `x_hat` (length `n`) and, when `x_t`
/// is not NULL, the quantized transmit vector. `delta` of the handle is not
/// used; only `rho` and `lambda` enter the finite-size problem.
///
/// # Safety
/// Buffers must be valid for the stated lengths; `info` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn crq_precode(
    params: *const CrqParams,
    h: *const f64,
    k: usize,
    n: usize,
    s: *const f64,
    x_hat: *mut f64,
    x_t: *mut f64,
    info: *mut CrqPrecodeInfo,
) -> CrqStatus {
    guard(|| {
        let p = params_ref(params)?;
        if h.is_null() || s.is_null() {
            return Err(fail(CrqStatus::NullPointer, "h or s is null"));
        }
        check_out(x_hat, "x_hat")?;
        let len = k
            .checked_mul(n)
            .filter(|&l| l > 0)
            .ok_or_else(|| fail(CrqStatus::Dimension, format!("invalid dimensions {k}x{n}")))?;
        let hm = ArrayView2::from_shape((k, n), std::slice::from_raw_parts(h, len))
            .map_err(|e| fail(CrqStatus::Dimension, e.to_string()))?;
        let sv = ArrayView1::from(std::slice::from_raw_parts(s, k));
        let r = lift(precoder::solve_crq(hm, sv, p, CrqOptions::default()))?;
        std::slice::from_raw_parts_mut(x_hat, n).copy_from_slice(&r.x_hat);
        if !x_t.is_null() {
            std::slice::from_raw_parts_mut(x_t, n).copy_from_slice(&r.x_t);
        }
        if !info.is_null() {
            *info = CrqPrecodeInfo {
                a_hat: r.a_hat,
                objective: r.objective,
                inner_iters: r.inner_iters,
                outer_evals: r.outer_evals,
            };
        }
        Ok(())
    })
}

/// Monte Carlo SEP experiment on an `n`-antenna, `k`-user system with the
/// convex precoder. The handle's `delta` must equal `k / n`.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crq_sep_experiment(
    params: *const CrqParams,
    n: usize,
    k: usize,
    trials: u64,
    seed: u64,
    out: *mut CrqMcSummary,
) -> CrqStatus {
    guard(|| {
        let p = params_ref(params)?;
        check_out(out, "out")?;
        if n == 0 || k == 0 {
            return Err(fail(
                CrqStatus::Dimension,
                format!("invalid dimensions N={n} K={k}"),
            ));
        }
        let delta = k as f64 / n as f64;
        if (delta - p.delta).abs() > 1e-12 * delta {
            return Err(fail(
                CrqStatus::InvalidParams,
                format!("handle has delta={} but K/N={delta}", p.delta),
            ));
        }
        let cfg = SystemConfig {
            n,
            k,
            sigma2: p.sigma2,
            rho: p.rho,
            lambda: p.lambda,
            squid: p.squid,
            solver: Default::default(),
        };
        let r = lift(simulation::run_sep_experiment(&cfg, trials, seed))?;
        *out = CrqMcSummary {
            sep_hat: r.sep_hat,
            sep_ci: r.sep_ci,
            sep_theory: r.theory.sep,
            alpha_hat: r.alpha_hat.value,
            alpha_stderr: r.alpha_hat.stderr,
            var_hat: r.var_hat.value,
            var_stderr: r.var_hat.stderr,
            trials: r.trials,
            errors: r.errors,
            symbols: r.symbols,
        };
        Ok(())
    })
}
