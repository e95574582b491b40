//! Finite-size CRQ precoding.
//!
//! The relaxation
//!
//! ```text
//! min_{a >= 0, |x_i| <= a}  (1/N)|s - Hx|^2 + (rho/N)|x|^2 + lambda a^2
//! ```
//!
//! is solved as a one-dimensional outer problem over `a` on top of a
//! box-constrained ridge regression over `x`, and the transmit vector is the
//! sign of the relaxed solution.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::amp::{self, AmpOptions, Calibration};
use crate::error::{CrqError, Result};
use crate::state_evolution::{self, ModelParams};

/// Which routine solves the inner problem at fixed `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerBackend {
    /// Accelerated projected gradient.
    #[default]
    Convex,
    /// AMP with calibrated box denoiser.
    Amp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    /// Target for the projected-gradient fixed-point residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrqOptions {
    pub inner: InnerOptions,
    pub backend: InnerBackend,
    /// Relative width at which the outer golden-section search stops.
    pub outer_tol: f64,
}

impl Default for CrqOptions {
    fn default() -> Self {
        Self {
            inner: InnerOptions::default(),
            backend: InnerBackend::Convex,
            outer_tol: 1e-7,
        }
    }
}

/// Solution of the inner problem at one box level.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x: Array1<f64>,
    /// `f_N(a) = (1/N)|s - Hx|^2 + (rho/N)|x|^2` at `x`.
    pub value: f64,
    pub iters: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecodeResult {
    pub x_hat: Vec<f64>,
    /// `|x_hat|_inf`.
    pub a_hat: f64,
    pub x_t: Vec<f64>,
    /// `(1/N)|s - H x_hat|^2 + (rho/N)|x_hat|^2 + lambda a_hat^2`.
    pub objective: f64,
    pub inner_iters: usize,
    pub outer_evals: usize,
}

fn check_dims(h: ArrayView2<f64>, s: ArrayView1<f64>) -> Result<()> {
    let (k, n) = h.dim();
    if k == 0 || n == 0 {
        return Err(CrqError::Dimension(format!("empty channel matrix {k}x{n}")));
    }
    if s.len() != k {
        return Err(CrqError::Dimension(format!(
            "H is {k}x{n} but s has length {}",
            s.len()
        )));
    }
    Ok(())
}

/// Largest eigenvalue of `H^T H` by power iteration on `H^T (H v)`.
pub fn spectral_norm_sq(h: ArrayView2<f64>) -> f64 {
    spectral_norm_sq_with(h, h.t().as_standard_layout().view())
}

fn spectral_norm_sq_with(h: ArrayView2<f64>, ht: ArrayView2<f64>) -> f64 {
    let n = h.ncols();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..500 {
        let w = ht.dot(&h.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-12 * next {
            est = next;
            break;
        }
        est = next;
    }
    est
}

/// Box-constrained ridge regression `min_{|x_i| <= a} (1/N)|s - Hx|^2 + (rho/N)|x|^2`
/// for one channel and symbol vector, reused across box levels.
#[derive(Debug, Clone)]
pub struct BoxRidge<'a> {
    h: ArrayView2<'a, f64>,
    /// Row-major copy of `H^T`; products with a transposed view are strided.
    ht: Array2<f64>,
    s: ArrayView1<'a, f64>,
    rho: f64,
    lipschitz: f64,
}

impl<'a> BoxRidge<'a> {
    pub fn new(h: ArrayView2<'a, f64>, s: ArrayView1<'a, f64>, rho: f64) -> Result<Self> {
        check_dims(h, s)?;
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(CrqError::InvalidParams(format!(
                "rho must be nonnegative, got {rho}"
            )));
        }
        let n = h.ncols() as f64;
        let ht = h.t().as_standard_layout().into_owned();
        // Power iteration approaches the top eigenvalue from below.
        let lipschitz = 2.0 * (1.02 * spectral_norm_sq_with(h, ht.view()) + rho) / n;
        Ok(Self {
            h,
            ht,
            s,
            rho,
            lipschitz,
        })
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn objective(&self, x: ArrayView1<f64>) -> f64 {
        empirical_objective(self.h, self.s, x, self.rho)
    }

    /// `(2/N) (H^T (H x - s) + rho x)`.
    pub fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let resid = self.h.dot(&x) - self.s;
        let mut g = self.ht.dot(&resid);
        g.scaled_add(self.rho, &x);
        g *= 2.0 / self.n() as f64;
        g
    }

    /// `|x - P(x - grad/L)| / sqrt(N)`.
    pub fn kkt_residual(&self, x: ArrayView1<f64>, a: f64) -> f64 {
        let g = self.gradient(x);
        let step = 1.0 / self.lipschitz;
        let sq: f64 = x
            .iter()
            .zip(g.iter())
            .map(|(&xi, &gi)| {
                let d = xi - (xi - step * gi).clamp(-a, a);
                d * d
            })
            .sum();
        (sq / self.n() as f64).sqrt()
    }

    /// FISTA with gradient-based restart, started from `warm` projected onto
    /// the box.
    pub fn solve(
        &self,
        a: f64,
        warm: Option<ArrayView1<f64>>,
        opts: InnerOptions,
    ) -> Result<InnerSolution> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(CrqError::InvalidParams(format!(
                "box level must be nonnegative, got {a}"
            )));
        }
        let n = self.n();
        if a == 0.0 {
            let x = Array1::zeros(n);
            let value = self.objective(x.view());
            return Ok(InnerSolution {
                x,
                value,
                iters: 0,
                kkt_residual: 0.0,
            });
        }
        let mut x = match warm {
            Some(w) if w.len() == n => w.mapv(|v| v.clamp(-a, a)),
            _ => Array1::zeros(n),
        };
        let step = 1.0 / self.lipschitz;
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut residual = self.kkt_residual(x.view(), a);
        if residual < opts.tol {
            let value = self.objective(x.view());
            return Ok(InnerSolution {
                x,
                value,
                iters: 0,
                kkt_residual: residual,
            });
        }
        for iter in 1..=opts.max_iter {
            let g = self.gradient(y.view());
            let mut x_next = y.clone();
            x_next.scaled_add(-step, &g);
            x_next.mapv_inplace(|v| v.clamp(-a, a));

            // Restart momentum when the step opposes the last move.
            let restart = (&y - &x_next).dot(&(&x_next - &x)) > 0.0;
            let t_next = if restart {
                1.0
            } else {
                0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
            };
            y = if restart {
                x_next.clone()
            } else {
                let beta = (t - 1.0) / t_next;
                &x_next + &((&x_next - &x) * beta)
            };
            x = x_next;
            t = t_next;

            if iter % 10 == 0 || iter == opts.max_iter {
                residual = self.kkt_residual(x.view(), a);
                if residual < opts.tol {
                    let value = self.objective(x.view());
                    return Ok(InnerSolution {
                        x,
                        value,
                        iters: iter,
                        kkt_residual: residual,
                    });
                }
            }
        }
        Err(CrqError::NonConvergence {
            what: "projected gradient",
            iters: opts.max_iter,
            residual,
        })
    }
}

/// `(1/N)|s - Hx|^2 + (rho/N)|x|^2`.
pub fn empirical_objective(
    h: ArrayView2<f64>,
    s: ArrayView1<f64>,
    x: ArrayView1<f64>,
    rho: f64,
) -> f64 {
    let n = h.ncols() as f64;
    let r = &s - &h.dot(&x);
    (r.dot(&r) + rho * x.dot(&x)) / n
}

/// Solves the inner problem at box level `a` by projected gradient.
pub fn solve_inner(
    h: ArrayView2<f64>,
    s: ArrayView1<f64>,
    a: f64,
    rho: f64,
    opts: InnerOptions,
) -> Result<InnerSolution> {
    BoxRidge::new(h, s, rho)?.solve(a, None, opts)
}

/// Inner solve through AMP. The asymptotic fixed point at `a` only seeds the
/// denoiser; the calibration is re-solved on the instance so the iteration
/// lands on the exact minimizer.
fn solve_inner_amp(
    problem: &BoxRidge,
    a: f64,
    params: &ModelParams,
    opts: InnerOptions,
) -> Result<InnerSolution> {
    let (k, n) = problem.h.dim();
    let delta = k as f64 / n as f64;
    let scalar = ModelParams { delta, ..*params };
    let fp = state_evolution::solve_fixed_point(a, &scalar)?;
    let amp_opts = AmpOptions {
        calibration: Calibration::Adaptive,
        ..AmpOptions::default()
    };
    let out = amp::amp_run(problem.h, problem.s, a, &fp, problem.rho, amp_opts)?;
    if !out.converged {
        return Err(CrqError::NonConvergence {
            what: "AMP",
            iters: out.trace.len(),
            residual: out.trace.last().map_or(f64::NAN, |r| r.change),
        });
    }
    // A few projected-gradient steps clean up the last digits.
    problem.solve(a, Some(out.x.view()), opts).map(|mut sol| {
        sol.iters += out.trace.len();
        sol
    })
}

/// CRQ precoding of one symbol vector.
///
/// `g_N(a) = f_N(a) + lambda a^2` is convex (partial minimization of a jointly
/// convex objective), so the outer search brackets by doubling from
/// `[0, 1]` and then runs golden-section search, warm-starting every inner
/// solve from the previous solution.
pub fn solve_crq(
    h: ArrayView2<f64>,
    s: ArrayView1<f64>,
    params: &ModelParams,
    opts: CrqOptions,
) -> Result<PrecodeResult> {
    params.validate()?;
    let problem = BoxRidge::new(h, s, params.rho)?;
    let lambda = params.lambda;

    let mut warm: Option<Array1<f64>> = None;
    let mut inner_iters = 0usize;
    let mut outer_evals = 0usize;
    let mut eval = |a: f64| -> Result<(f64, Array1<f64>)> {
        let sol = match opts.backend {
            InnerBackend::Convex => {
                problem.solve(a, warm.as_ref().map(|w| w.view()), opts.inner)?
            }
            InnerBackend::Amp => solve_inner_amp(&problem, a, params, opts.inner)?,
        };
        inner_iters += sol.iters;
        outer_evals += 1;
        warm = Some(sol.x.clone());
        Ok((sol.value + lambda * a * a, sol.x))
    };

    let (g0, x0) = eval(0.0)?;
    let mut best = (g0, 0.0, x0);
    let (mut g_cur, x_cur) = eval(1.0)?;
    if g_cur < best.0 {
        best = (g_cur, 1.0, x_cur);
    }
    let (mut lo, mut hi) = if g_cur >= g0 {
        (0.0, 1.0)
    } else {
        let (mut prev, mut cur) = (0.0, 1.0);
        loop {
            let next = cur * 2.0;
            let (g_next, x_next) = eval(next)?;
            if g_next < best.0 {
                best = (g_next, next, x_next);
            }
            if g_next > g_cur || next > 1e12 {
                break (prev, next);
            }
            prev = cur;
            cur = next;
            g_cur = g_next;
        }
    };

    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut a1 = hi - inv_phi * (hi - lo);
    let mut a2 = lo + inv_phi * (hi - lo);
    let (mut g1, x1) = eval(a1)?;
    let (mut g2, x2) = eval(a2)?;
    for (g, a, x) in [(g1, a1, x1), (g2, a2, x2)] {
        if g < best.0 {
            best = (g, a, x);
        }
    }
    while hi - lo > opts.outer_tol * (1.0 + hi) {
        if g1 <= g2 {
            hi = a2;
            a2 = a1;
            g2 = g1;
            a1 = hi - inv_phi * (hi - lo);
            let (g, x) = eval(a1)?;
            g1 = g;
            if g < best.0 {
                best = (g, a1, x);
            }
        } else {
            lo = a1;
            a1 = a2;
            g1 = g2;
            a2 = lo + inv_phi * (hi - lo);
            let (g, x) = eval(a2)?;
            g2 = g;
            if g < best.0 {
                best = (g, a2, x);
            }
        }
    }

    let (_, _, x_hat) = best;
    let a_hat = x_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let objective = problem.objective(x_hat.view()) + lambda * a_hat * a_hat;
    let x_t = quantize(x_hat.view());
    Ok(PrecodeResult {
        x_hat: x_hat.to_vec(),
        a_hat,
        x_t: x_t.to_vec(),
        objective,
        inner_iters,
        outer_evals,
    })
}

/// SQUID as a CRQ instance: `rho = 0`, `lambda = sigma2 K / N`.
pub fn squid_preset(n: usize, k: usize, sigma2: f64) -> Result<ModelParams> {
    if n == 0 || k == 0 {
        return Err(CrqError::InvalidParams(format!(
            "N and K must be positive, got N={n} K={k}"
        )));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(CrqError::InvalidParams(format!(
            "sigma2 must be nonnegative, got {sigma2}"
        )));
    }
    let lambda = sigma2 * k as f64 / n as f64;
    if lambda == 0.0 {
        return Err(CrqError::DegenerateLambda);
    }
    Ok(ModelParams {
        delta: k as f64 / n as f64,
        rho: 0.0,
        lambda,
        sigma2,
        squid: true,
    })
}

/// Element-wise sign with `sgn(0) = +1`.
pub fn quantize(x: ArrayView1<f64>) -> Array1<f64> {
    x.mapv(|v| if v < 0.0 { -1.0 } else { 1.0 })
}

/// `(1/N)|s - Hx|^2 + (rho/N)|x|^2 + lambda |x|_inf^2`, the equivalent
/// unconstrained form of the relaxation.
pub fn unconstrained_objective(
    h: ArrayView2<f64>,
    s: ArrayView1<f64>,
    x: ArrayView1<f64>,
    rho: f64,
    lambda: f64,
) -> f64 {
    let inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    empirical_objective(h, s, x, rho) + lambda * inf * inf
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_instance(k: usize, n: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (k as f64).sqrt();
        let h = Array2::from_shape_fn((k, n), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        let s = Array1::from_shape_fn(k, |i| {
            if (seed as usize + i * 7).is_multiple_of(3) {
                -1.0
            } else {
                1.0
            }
        });
        (h, s)
    }

    #[test]
    fn quantize_convention() {
        assert_eq!(
            quantize(array![0.3, -0.1, 0.0, -0.0].view()),
            array![1.0, -1.0, 1.0, 1.0]
        );
        assert_eq!(quantize(array![-0.7, 0.7].view()), array![-1.0, 1.0]);
    }

    #[test]
    fn zero_box_inner() {
        let (h, s) = random_instance(8, 16, 1);
        let sol = solve_inner(h.view(), s.view(), 0.0, 0.2, InnerOptions::default()).unwrap();
        assert!(sol.x.iter().all(|&v| v == 0.0));
        assert!((sol.value - s.dot(&s) / 16.0).abs() < 1e-15);
    }

    #[test]
    fn power_iteration_top_eigenvalue() {
        let h = array![[3.0, 0.0], [0.0, 1.0]];
        assert!((spectral_norm_sq(h.view()) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn squid_lambda() {
        let p = squid_preset(128, 64, 1.0).unwrap();
        assert_eq!((p.lambda, p.rho, p.delta), (0.5, 0.0, 0.5));
        assert!(p.squid);
        assert_eq!(squid_preset(128, 64, 0.0), Err(CrqError::DegenerateLambda));
    }

    #[test]
    fn crq_box_is_active() {
        let (h, s) = random_instance(32, 64, 5);
        let p = ModelParams::new(0.5, 0.2, 0.2, 0.1).unwrap();
        let r = solve_crq(h.view(), s.view(), &p, CrqOptions::default()).unwrap();
        assert!(r.a_hat > 0.0);
        let clipped = r
            .x_hat
            .iter()
            .filter(|v| (v.abs() - r.a_hat).abs() < 1e-12)
            .count();
        assert!(clipped > 0);
        assert!(r.x_t.iter().all(|&v| v == 1.0 || v == -1.0));
        let kkt = BoxRidge::new(h.view(), s.view(), 0.2)
            .unwrap()
            .kkt_residual(Array1::from(r.x_hat.clone()).view(), r.a_hat);
        assert!(kkt < 1e-9, "{kkt}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let h = Array2::<f64>::zeros((3, 4));
        let s = Array1::<f64>::zeros(2);
        assert!(matches!(
            solve_inner(h.view(), s.view(), 1.0, 0.1, InnerOptions::default()),
            Err(CrqError::Dimension(_))
        ));
    }
}
