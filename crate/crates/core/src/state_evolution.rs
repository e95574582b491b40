//! Scalar asymptotics of the CRQ precoder.
//!
//! For a box level `a` the pair `(tau_a^2, gamma_a)` solves
//!
//! ```text
//! tau^2 = 1 + E[eta_a(tau Z; gamma)^2] / delta
//! rho   = gamma * (1 - E[eta_a'(tau Z; gamma)] / delta)
//! ```
//!
//! The asymptotic risk `f(a) = delta rho (tau_a^2 - 1) + delta rho^2 tau_a^2 / gamma_a^2 + lambda a^2`
//! is strongly convex with a positive minimizer `a*`, and the received signal
//! of every user behaves like `alpha_bar S + sqrt(beta_bar + sigma2) Z`.

use serde::{Deserialize, Serialize};

use crate::error::{CrqError, Result};
use crate::scalar::{
    central_mass, kernels_closed_form, mean_abs_normal, normal_pdf, q_function,
    truncated_second_moment, DenoiserParams, GaussianKernelResult,
};

/// Stand-in for `rho = 0`: the analysis needs `rho > 0`, so `rho = 0` is
/// evaluated as the limit from above.
pub const RHO_CONTINUATION: f64 = 1e-8;

/// Residual target for both fixed-point equations.
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// Model parameters of the asymptotic analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Load ratio `K / N`.
    pub delta: f64,
    /// l2 regularizer; zero selects the continuation mode.
    pub rho: f64,
    /// Box regularizer.
    pub lambda: f64,
    /// Receiver noise variance.
    pub sigma2: f64,
    /// Set by the SQUID preset (`rho = 0`, `lambda = sigma2 K / N`).
    #[serde(default)]
    pub squid: bool,
}

impl ModelParams {
    pub fn new(delta: f64, rho: f64, lambda: f64, sigma2: f64) -> Result<Self> {
        let p = Self {
            delta,
            rho,
            lambda,
            sigma2,
            squid: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CrqError::InvalidParams(m));
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return bad(format!("rho must be nonnegative, got {}", self.rho));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return bad(format!("sigma2 must be nonnegative, got {}", self.sigma2));
        }
        Ok(())
    }

    /// True when `rho = 0`, which lies outside the range where the
    /// asymptotic characterization is proven.
    pub fn is_continuation(&self) -> bool {
        self.rho == 0.0
    }

    /// The `rho` used by the scalar analysis.
    pub fn effective_rho(&self) -> f64 {
        if self.rho == 0.0 {
            RHO_CONTINUATION
        } else {
            self.rho
        }
    }
}

/// Solution `(tau_a^2, gamma_a)` of the fixed-point system at box level `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub tau2: f64,
    pub gamma: f64,
    pub a: f64,
    /// Residuals of the `tau^2` equation and of the `gamma` equation.
    pub residuals: (f64, f64),
}

impl FixedPoint {
    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }

    pub fn denoiser(&self) -> DenoiserParams {
        DenoiserParams::new(self.a, self.gamma)
    }

    pub fn kernels(&self) -> GaussianKernelResult {
        kernels_closed_form(self.tau(), self.denoiser())
    }
}

/// Starting point for [`solve_fixed_point_from`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointStart {
    pub tau2: f64,
    pub gamma: f64,
}

/// Everything the asymptotic model predicts for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCharacterization {
    pub a_star: f64,
    pub fp_star: FixedPoint,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub snr_bar: f64,
    pub sep: f64,
}

/// Residuals `(tau^2 eq, gamma eq)` at a candidate point.
pub fn fixed_point_residuals(tau2: f64, gamma: f64, a: f64, delta: f64, rho: f64) -> (f64, f64) {
    let k = kernels_closed_form(tau2.sqrt(), DenoiserParams::new(a, gamma));
    (
        tau2 - 1.0 - k.m2 / delta,
        gamma * (1.0 - k.d1 / delta) - rho,
    )
}

/// Solves the `tau^2` equation at fixed `gamma`.
///
/// `g(t) = 1 + m2(sqrt t)/delta - t` is concave in `t` with `g(1) >= 0` and
/// `g(1 + a^2/delta) < 0`, so the root is unique. Newton steps are taken
/// inside the bracket, falling back to the plain fixed-point map and then to
/// bisection.
fn solve_tau2(a: f64, gamma: f64, delta: f64, start: f64) -> Result<f64> {
    if a == 0.0 {
        return Ok(1.0);
    }
    let p = DenoiserParams::new(a, gamma);
    let eval = |t: f64| {
        let tau = t.sqrt();
        let m2 = kernels_closed_form(tau, p).m2;
        let b = p.input_threshold() / tau;
        let slope = truncated_second_moment(b) / ((1.0 + gamma).powi(2) * delta) - 1.0;
        (1.0 + m2 / delta - t, 1.0 + m2 / delta, slope)
    };
    let mut lo = 1.0;
    let mut hi = 1.0 + a * a / delta;
    let mut t = start.clamp(lo, hi);
    for _ in 0..200 {
        let (g, mapped, slope) = eval(t);
        if g == 0.0 {
            return Ok(t);
        }
        if g > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi || g.abs() < 1e-15 * t {
            return Ok(t);
        }
        let newton = t - g / slope;
        t = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else if mapped > lo && mapped < hi {
            mapped
        } else {
            0.5 * (lo + hi)
        };
    }
    let (g, _, _) = eval(t);
    if g.abs() < 1e-13 {
        Ok(t)
    } else {
        Err(CrqError::NonConvergence {
            what: "tau^2 equation",
            iters: 200,
            residual: g.abs(),
        })
    }
}

/// Solves the fixed-point system starting from `tau^2 = 1`, `gamma = rho`.
pub fn solve_fixed_point(a: f64, params: &ModelParams) -> Result<FixedPoint> {
    let rho = params.effective_rho();
    solve_fixed_point_from(
        a,
        params,
        FixedPointStart {
            tau2: 1.0,
            gamma: rho,
        },
    )
}

/// Solves the fixed-point system from a given starting point.
///
/// For each `gamma` the `tau^2` equation is solved exactly, leaving a scalar
/// root-finding problem in `gamma`. Every root lies in
/// `[rho, rho + 1/delta]`: below `rho` the residual is negative because
/// `1 - E[eta']/delta <= 1`, and at `rho + 1/delta` it is positive because
/// `E[eta'] <= 1/(1 + gamma)`. The bracket is grown from the starting
/// `gamma`, bisected, then polished with a secant step.
pub fn solve_fixed_point_from(
    a: f64,
    params: &ModelParams,
    start: FixedPointStart,
) -> Result<FixedPoint> {
    params.validate()?;
    if !(a.is_finite() && a >= 0.0) {
        return Err(CrqError::InvalidParams(format!(
            "box level must be nonnegative, got {a}"
        )));
    }
    let delta = params.delta;
    let rho = params.effective_rho();

    let mut tau2_hint = start.tau2.max(1.0);
    let residual = |gamma: f64, hint: &mut f64| -> Result<(f64, f64)> {
        let t = solve_tau2(a, gamma, delta, *hint)?;
        *hint = t;
        let d1 = kernels_closed_form(t.sqrt(), DenoiserParams::new(a, gamma)).d1;
        Ok((gamma * (1.0 - d1 / delta) - rho, t))
    };

    let floor = rho;
    let ceil = rho + 1.0 / delta;
    let g0 = if start.gamma.is_finite() && start.gamma > 0.0 {
        start.gamma.clamp(floor, ceil)
    } else {
        floor
    };

    // Bracket: lo has residual <= 0, hi has residual > 0.
    let (r0, t0) = residual(g0, &mut tau2_hint)?;
    if r0 == 0.0 {
        return finish(a, t0, g0, delta, rho);
    }
    let (mut lo, mut hi) = if r0 < 0.0 { (g0, ceil) } else { (floor, g0) };
    if r0 < 0.0 {
        let mut probe = g0;
        while probe < ceil {
            probe = (probe * 2.0).min(ceil);
            let (r, _) = residual(probe, &mut tau2_hint)?;
            if r > 0.0 {
                hi = probe;
                break;
            }
            lo = probe;
        }
    } else {
        let mut probe = g0;
        while probe > floor {
            probe = (probe * 0.5).max(floor);
            let (r, _) = residual(probe, &mut tau2_hint)?;
            if r <= 0.0 {
                lo = probe;
                break;
            }
            hi = probe;
        }
    }
    if lo == floor {
        let (r, t) = residual(floor, &mut tau2_hint)?;
        if r == 0.0 {
            return finish(a, t, floor, delta, rho);
        }
    }

    let mut best = (f64::INFINITY, lo, 1.0);
    for _ in 0..400 {
        let mid = if hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let (r, t) = residual(mid, &mut tau2_hint)?;
        if r.abs() < best.0 {
            best = (r.abs(), mid, t);
        }
        if r == 0.0 {
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (_, mut gamma, mut tau2) = best;
    // Secant polish across the final bracket.
    let (rl, _) = residual(lo, &mut tau2_hint)?;
    let (rh, _) = residual(hi, &mut tau2_hint)?;
    if rh != rl {
        let cand = lo - rl * (hi - lo) / (rh - rl);
        if cand > lo && cand < hi {
            let (rc, tc) = residual(cand, &mut tau2_hint)?;
            if rc.abs() < best.0 {
                gamma = cand;
                tau2 = tc;
            }
        }
    }
    finish(a, tau2, gamma, delta, rho)
}

fn finish(a: f64, tau2: f64, gamma: f64, delta: f64, rho: f64) -> Result<FixedPoint> {
    let residuals = fixed_point_residuals(tau2, gamma, a, delta, rho);
    let worst = residuals.0.abs().max(residuals.1.abs());
    if worst >= FIXED_POINT_TOL {
        return Err(CrqError::NonConvergence {
            what: "fixed point",
            iters: 400,
            residual: worst,
        });
    }
    Ok(FixedPoint {
        tau2,
        gamma,
        a,
        residuals,
    })
}

/// Limit of the optimal value of the inner box-constrained ridge problem,
/// `delta rho (tau_a^2 - 1) + delta rho^2 tau_a^2 / gamma_a^2`.
pub fn inner_value_limit(fp: &FixedPoint, params: &ModelParams) -> f64 {
    let rho = params.effective_rho();
    let d = params.delta;
    d * rho * (fp.tau2 - 1.0) + d * rho * rho * fp.tau2 / (fp.gamma * fp.gamma)
}

/// Asymptotic risk `f(a)`.
pub fn risk_f(a: f64, params: &ModelParams) -> Result<f64> {
    let fp = solve_fixed_point(a, params)?;
    Ok(inner_value_limit(&fp, params) + params.lambda * a * a)
}

/// `f'(a)` by implicit differentiation of the fixed-point system.
pub fn risk_derivative(a: f64, params: &ModelParams) -> Result<f64> {
    let fp = solve_fixed_point(a, params)?;
    Ok(risk_derivative_at(&fp, params))
}

fn risk_derivative_at(fp: &FixedPoint, params: &ModelParams) -> f64 {
    let (a, t, g) = (fp.a, fp.tau2, fp.gamma);
    let delta = params.delta;
    let rho = params.effective_rho();
    let lambda = params.lambda;
    let tau = t.sqrt();
    let og = 1.0 + g;
    let b = a * og / tau;
    let trunc = truncated_second_moment(b);
    let mass = central_mass(b);
    let pdf = normal_pdf(b);
    let d1 = mass / og;

    let dm2_dt = trunc / (og * og);
    let dm2_dg = -2.0 * t * trunc / (og * og * og);
    let dm2_da = 4.0 * a * q_function(b);
    let dd1_dt = -pdf * b / (og * t);
    let dd1_dg = (2.0 * pdf * b - mass) / (og * og);
    let dd1_da = 2.0 * pdf / tau;

    let j11 = 1.0 - dm2_dt / delta;
    let j12 = -dm2_dg / delta;
    let j21 = -g * dd1_dt / delta;
    let j22 = 1.0 - d1 / delta - g * dd1_dg / delta;
    let r1 = dm2_da / delta;
    let r2 = g * dd1_da / delta;
    let det = j11 * j22 - j12 * j21;
    let dt = (r1 * j22 - j12 * r2) / det;
    let dg = (j11 * r2 - j21 * r1) / det;

    delta * rho * dt
        + delta * rho * rho * (dt / (g * g) - 2.0 * t * dg / (g * g * g))
        + 2.0 * lambda * a
}

/// Maximum number of doublings of the initial bracket `[0, 1]`.
const MAX_DOUBLINGS: usize = 60;

/// Minimizer `a*` of the asymptotic risk.
///
/// Brackets by doubling from `[0, 1]`, shrinks the bracket by golden-section
/// search, and finishes with bisection on the sign of `f'`.
pub fn minimize_risk(params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let f = |a: f64| risk_f(a, params);

    let mut prev = 0.0;
    let mut f_prev = f(prev)?;
    let mut cur = 1.0;
    let mut f_cur = f(cur)?;
    let (mut lo, mut hi) = if f_cur >= f_prev {
        (0.0, 1.0)
    } else {
        let mut found = None;
        for _ in 0..MAX_DOUBLINGS {
            let next = cur * 2.0;
            let f_next = f(next)?;
            if f_next > f_cur {
                found = Some((prev, next));
                break;
            }
            prev = cur;
            f_prev = f_cur;
            cur = next;
            f_cur = f_next;
        }
        let _ = f_prev;
        found.ok_or(CrqError::BracketFailure(MAX_DOUBLINGS))?
    };

    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > 1e-6 * (1.0 + hi) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }

    // Bisection on f'. Widen first in case function-value noise pushed the
    // golden-section bracket off the minimizer.
    let df = |a: f64| risk_derivative(a, params);
    let width = hi - lo;
    while lo > 0.0 && df(lo)? > 0.0 {
        lo = (lo - width).max(0.0);
    }
    while df(hi)? < 0.0 {
        hi += width;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if df(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let a_star = 0.5 * (lo + hi);
    if a_star <= 0.0 {
        return Err(CrqError::NonConvergence {
            what: "risk minimizer",
            iters: 0,
            residual: 0.0,
        });
    }
    Ok(a_star)
}

/// Computes `a*`, the fixed point there, and the scalar channel
/// `alpha_bar S + sqrt(beta_bar + sigma2) Z` with its symbol error
/// probability.
pub fn characterize(params: &ModelParams) -> Result<AsymptoticCharacterization> {
    let a_star = minimize_risk(params)?;
    let fp_star = solve_fixed_point(a_star, params)?;
    Ok(characterize_at(fp_star, params))
}

/// Scalar channel constants at a solved fixed point.
pub fn characterize_at(fp_star: FixedPoint, params: &ModelParams) -> AsymptoticCharacterization {
    let delta = params.delta;
    let alpha_bar = mean_abs_normal() / (delta * fp_star.tau());
    let k = fp_star.kernels();
    let beta_bar = (alpha_bar * alpha_bar * k.m2 - 2.0 * alpha_bar * k.mabs + 1.0) / delta;
    let snr_bar = snr_of(alpha_bar, beta_bar, params.sigma2);
    let mut out = AsymptoticCharacterization {
        a_star: fp_star.a,
        fp_star,
        alpha_bar,
        beta_bar,
        snr_bar,
        sep: 0.0,
    };
    out.sep = sep_prediction(&out);
    out
}

fn snr_of(alpha: f64, beta: f64, sigma2: f64) -> f64 {
    let noise = beta + sigma2;
    if noise > 0.0 {
        alpha * alpha / noise
    } else {
        f64::INFINITY
    }
}

/// `Q(sqrt(snr_bar))`.
pub fn sep_prediction(c: &AsymptoticCharacterization) -> f64 {
    q_function(c.snr_bar.sqrt())
}

/// Iterates `tau_{t+1}^2 = 1 + E[eta_a(tau_t Z; gamma_a)^2] / delta` from
/// `tau_0^2 = 1`; returns `tau_0^2 ..= tau_iters^2`.
pub fn state_evolution_trajectory(fp: &FixedPoint, delta: f64, iters: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(iters + 1);
    let mut t = 1.0f64;
    out.push(t);
    for _ in 0..iters {
        t = 1.0 + kernels_closed_form(t.sqrt(), fp.denoiser()).m2 / delta;
        out.push(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(delta: f64, rho: f64, lambda: f64) -> ModelParams {
        ModelParams::new(delta, rho, lambda, 0.0).unwrap()
    }

    #[test]
    fn zero_box_fixed_point() {
        let fp = solve_fixed_point(0.0, &params(0.5, 0.2, 0.3)).unwrap();
        assert_eq!(fp.tau2, 1.0);
        assert!((fp.gamma - 0.2).abs() < 1e-15);
    }

    #[test]
    fn residuals_below_tolerance() {
        let p = params(0.5, 0.2, 0.3);
        let fp = solve_fixed_point(0.8, &p).unwrap();
        let (r1, r2) = fixed_point_residuals(fp.tau2, fp.gamma, 0.8, 0.5, 0.2);
        assert!(r1.abs() < 1e-10 && r2.abs() < 1e-10);
        assert!(fp.tau2 >= 1.0 && fp.gamma > 0.0);
    }

    #[test]
    fn unique_from_random_starts() {
        let p = params(0.5, 0.2, 0.3);
        let base = solve_fixed_point(0.8, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let start = FixedPointStart {
                tau2: rng.random_range(1.0..50.0),
                gamma: rng.random_range(1e-3..50.0),
            };
            let fp = solve_fixed_point_from(0.8, &p, start).unwrap();
            assert!((fp.tau2 - base.tau2).abs() < 1e-9);
            assert!((fp.gamma - base.gamma).abs() < 1e-9);
        }
    }

    #[test]
    fn risk_at_zero_is_delta() {
        let f0 = risk_f(0.0, &params(0.5, 0.2, 0.3)).unwrap();
        assert!((f0 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn risk_derivative_matches_central_difference() {
        for &(d, r, l) in &[
            (0.5, 0.2, 0.3),
            (0.25, 0.2, 0.2),
            (1.5, 0.05, 0.7),
            (0.5, 0.0, 0.31),
        ] {
            let p = params(d, r, l);
            for &a in &[0.0f64, 0.1, 0.4, 0.9, 2.0] {
                let h = 1e-5f64;
                let lo = (a - h).max(0.0);
                let fd = (risk_f(a + h, &p).unwrap() - risk_f(lo, &p).unwrap()) / (a + h - lo);
                let an = risk_derivative(a, &p).unwrap();
                let tol = if a == 0.0 { 1e-4 } else { 1e-6 };
                assert!(
                    (fd - an).abs() < tol * (1.0 + an.abs()),
                    "{p:?} a={a}: fd={fd} an={an}"
                );
            }
        }
    }

    #[test]
    fn heavier_box_penalty_shrinks_box() {
        let a1 = minimize_risk(&params(0.5, 0.2, 0.2)).unwrap();
        let a2 = minimize_risk(&params(0.5, 0.2, 0.4)).unwrap();
        assert!(a1 > 0.0 && a2 < a1, "{a1} {a2}");
    }

    #[test]
    fn noiseless_snr() {
        let c = characterize(&params(0.5, 0.2, 0.2)).unwrap();
        assert!((c.snr_bar - c.alpha_bar.powi(2) / c.beta_bar).abs() < 1e-14);
        let expected_alpha = (2.0 / std::f64::consts::PI).sqrt() / (0.5 * c.fp_star.tau());
        assert_eq!(c.alpha_bar, expected_alpha);
    }

    #[test]
    fn sep_values() {
        let mut c = characterize(&params(0.5, 0.2, 0.2)).unwrap();
        c.snr_bar = 0.0;
        assert_eq!(sep_prediction(&c), 0.5);
        c.snr_bar = 1.0;
        assert!((sep_prediction(&c) - 0.158_655_253_931_457).abs() < 1e-15);
        c.snr_bar = f64::INFINITY;
        assert_eq!(sep_prediction(&c), 0.0);
    }

    #[test]
    fn sep_nonincreasing_as_noise_drops() {
        let mut last = 0.5;
        for &s2 in &[2.0, 1.0, 0.5, 0.2, 0.1, 0.01, 0.0] {
            let c = characterize(&ModelParams::new(0.5, 0.2, 0.2, s2).unwrap()).unwrap();
            assert!(c.sep <= last);
            last = c.sep;
        }
    }

    #[test]
    fn trajectory_converges_to_fixed_point() {
        let p = params(0.5, 0.2, 0.2);
        let fp = solve_fixed_point(0.7, &p).unwrap();
        let traj = state_evolution_trajectory(&fp, p.delta, 300);
        assert_eq!(traj[0], 1.0);
        assert!((traj[300] - fp.tau2).abs() < 1e-10);
        assert!(traj.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(0.0, 0.2, 0.2, 0.0).is_err());
        assert!(ModelParams::new(0.5, -0.1, 0.2, 0.0).is_err());
        assert!(ModelParams::new(0.5, 0.2, 0.0, 0.0).is_err());
        assert!(ModelParams::new(0.5, 0.2, 0.2, -1.0).is_err());
    }
}
