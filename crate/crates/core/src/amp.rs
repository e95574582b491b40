//! AMP for the box-constrained ridge problem at a fixed box level:
//!
//! ```text
//! x_{t+1} = eta_a(x_t + H^T z_t; gamma)
//! z_t     = s - H x_t + (1/delta) <eta_a'(x_{t-1} + H^T z_{t-1}; gamma)> z_{t-1}
//! ```
//!
//! started from `x_0 = 0`, `z_0 = s` with no Onsager term at `t = 0`.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CrqError, Result};
use crate::precoder::empirical_objective;
use crate::scalar::{denoise, DenoiserParams};
use crate::state_evolution::{state_evolution_trajectory, FixedPoint};

/// `|x_t|^2 / N` above which the iteration is declared divergent.
const DIVERGENCE_ENERGY: f64 = 1e6;

/// How the denoiser shrinkage `gamma` is chosen at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    /// `gamma = gamma_a` from the scalar fixed point, held constant.
    #[default]
    Fixed,
    /// `gamma_t` solves `gamma (1 - <eta'>/delta) = rho` with the empirical
    /// fraction of unclipped coordinates. Any fixed point of this iteration
    /// satisfies the KKT conditions of the finite-size problem exactly.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpOptions {
    pub max_iter: usize,
    /// Stop once `|x_{t+1} - x_t|^2 / N` falls below this.
    pub tol: f64,
    pub calibration: Calibration,
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-12,
            calibration: Calibration::Fixed,
        }
    }
}

/// Iterate state after a full step.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub x: Array1<f64>,
    pub z: Array1<f64>,
    pub t: usize,
    /// `(1/delta) <eta'>` from the last denoising step.
    pub onsager: f64,
    pub gamma: f64,
}

/// One row per executed iteration `t -> t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpTraceRow {
    /// `|x_{t+1}|^2 / N`
    pub energy: f64,
    /// `|z_t|^2 / K`, the empirical effective noise variance of
    /// `x_t + H^T z_t`.
    pub tau2_hat: f64,
    /// `|x_{t+1} - x_t|^2 / N`
    pub change: f64,
    pub gamma: f64,
}

pub type AmpTrace = Vec<AmpTraceRow>;

#[derive(Debug, Clone, PartialEq)]
pub struct AmpOutput {
    pub x: Array1<f64>,
    pub state: AmpState,
    pub trace: AmpTrace,
    pub converged: bool,
}

/// Shrinkage that makes `gamma (1 - c / (delta N (1 + gamma))) = rho` hold
/// for `c` unclipped coordinates; the positive root of
/// `gamma^2 + (1 - w - rho) gamma - rho = 0` with `w = c / (delta N)`.
fn calibrated_gamma(unclipped: usize, n: usize, delta: f64, rho: f64) -> f64 {
    let w = unclipped as f64 / (delta * n as f64);
    let b = 1.0 - w - rho;
    let disc = (b * b + 4.0 * rho).sqrt();
    // Stable form of (-b + disc) / 2.
    if b >= 0.0 {
        if disc + b == 0.0 {
            0.0
        } else {
            2.0 * rho / (disc + b)
        }
    } else {
        0.5 * (disc - b)
    }
}

fn count_unclipped(r: &Array1<f64>, a: f64, gamma: f64) -> usize {
    let thr = a * (1.0 + gamma);
    r.iter().filter(|v| v.abs() < thr).count()
}

/// Runs AMP with the box denoiser at level `a` and shrinkage from `fp`.
///
/// `rho` is only consulted by [`Calibration::Adaptive`].
pub fn amp_run(
    h: ArrayView2<f64>,
    s: ArrayView1<f64>,
    a: f64,
    fp: &FixedPoint,
    rho: f64,
    opts: AmpOptions,
) -> Result<AmpOutput> {
    let (k, n) = h.dim();
    if s.len() != k {
        return Err(CrqError::Dimension(format!(
            "H is {k}x{n} but s has length {}",
            s.len()
        )));
    }
    if !(a.is_finite() && a >= 0.0) {
        return Err(CrqError::InvalidParams(format!(
            "box level must be nonnegative, got {a}"
        )));
    }
    if (fp.a - a).abs() > 1e-12 * (1.0 + a) {
        return Err(CrqError::InvalidParams(format!(
            "fixed point solved at a={} but AMP runs at a={a}",
            fp.a
        )));
    }
    let delta = k as f64 / n as f64;
    let nf = n as f64;

    let ht = h.t().as_standard_layout().into_owned();
    let mut x = Array1::<f64>::zeros(n);
    let mut z = s.to_owned();
    let mut gamma = fp.gamma;
    let mut onsager = 0.0;
    let mut trace = Vec::new();
    let mut converged = false;

    for t in 0..opts.max_iter {
        let mut r = ht.dot(&z);
        r += &x;
        if opts.calibration == Calibration::Adaptive {
            gamma = calibrated_gamma(count_unclipped(&r, a, gamma), n, delta, rho);
        }
        let p = DenoiserParams::new(a, gamma);
        let x_next = r.mapv(|v| denoise(v, p));
        onsager = count_unclipped(&r, a, gamma) as f64 / ((1.0 + gamma) * nf * delta);

        let diff = &x_next - &x;
        let change = diff.dot(&diff) / nf;
        let energy = x_next.dot(&x_next) / nf;
        trace.push(AmpTraceRow {
            energy,
            tau2_hat: z.dot(&z) / k as f64,
            change,
            gamma,
        });
        if !energy.is_finite() || energy > DIVERGENCE_ENERGY {
            return Err(CrqError::Divergence {
                iter: t + 1,
                energy,
            });
        }

        let mut z_next = s.to_owned() - h.dot(&x_next);
        z_next.scaled_add(onsager, &z);
        x = x_next;
        z = z_next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let state = AmpState {
        x: x.clone(),
        z,
        t: trace.len(),
        onsager,
        gamma,
    };
    Ok(AmpOutput {
        x,
        state,
        trace,
        converged,
    })
}

/// One row of [`empirical_tau_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauComparisonRow {
    /// Iterate index `t >= 1`.
    pub t: usize,
    /// `|x_t|^2 / N` from the run.
    pub empirical: f64,
    /// `delta (tau_t^2 - 1) = E[eta_a(tau_{t-1} Z; gamma_a)^2]`.
    pub predicted: f64,
    pub deviation: f64,
}

/// Compares the energy of each AMP iterate with the state-evolution
/// prediction started at `tau_0^2 = 1`.
pub fn empirical_tau_trace(trace: &AmpTrace, fp: &FixedPoint, delta: f64) -> Vec<TauComparisonRow> {
    let taus = state_evolution_trajectory(fp, delta, trace.len());
    trace
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let predicted = delta * (taus[i + 1] - 1.0);
            TauComparisonRow {
                t: i + 1,
                empirical: row.energy,
                predicted,
                deviation: (row.energy - predicted).abs(),
            }
        })
        .collect()
}

/// `(1/N)|s - Hx|^2 + (rho/N)|x|^2`.
pub fn amp_objective(h: ArrayView2<f64>, s: ArrayView1<f64>, x: ArrayView1<f64>, rho: f64) -> f64 {
    empirical_objective(h, s, x, rho)
}
