//! Monte Carlo validation: random channels and BPSK symbols, CRQ precoding,
//! sign detection at the users, and the empirical statistics that the
//! asymptotic model predicts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CrqError, Result};
use crate::precoder::{self, CrqOptions, InnerBackend};
use crate::state_evolution::{self, AsymptoticCharacterization, ModelParams};

/// Precoder used in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverBackend {
    #[default]
    Convex,
    Amp,
    /// Runs both and requires the transmit vectors to agree on at least
    /// [`CROSS_CHECK_AGREEMENT`] of the antennas.
    CrossCheck,
}

/// Minimum fraction of matching transmit signs in cross-check mode.
pub const CROSS_CHECK_AGREEMENT: f64 = 0.999;

/// A fully resolved simulation setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n: usize,
    pub k: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub lambda: f64,
    #[serde(default)]
    pub squid: bool,
    #[serde(default)]
    pub solver: SolverBackend,
}

impl SystemConfig {
    pub fn delta(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        if self.n == 0 || self.k == 0 {
            return Err(CrqError::InvalidParams(format!(
                "N and K must be positive, got N={} K={}",
                self.n, self.k
            )));
        }
        let p = ModelParams {
            delta: self.delta(),
            rho: self.rho,
            lambda: self.lambda,
            sigma2: self.sigma2,
            squid: self.squid,
        };
        p.validate()?;
        Ok(p)
    }
}

/// One random draw of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// `K x N`, entries `N(0, 1/K)`.
    pub h: Array2<f64>,
    /// BPSK symbols.
    pub s: Array1<f64>,
    /// Receiver noise, entries `N(0, sigma2)`.
    pub noise: Array1<f64>,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under master seed `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    splitmix64(master ^ splitmix64(trial.wrapping_add(0x5151_5151)))
}

/// Draws `H`, then `s`, then the noise from a ChaCha8 stream keyed by `seed`.
pub fn generate_instance(config: &SystemConfig, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, n) = (config.k, config.n);
    let scale = 1.0 / (k as f64).sqrt();
    let h = Array2::from_shape_simple_fn((k, n), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    });
    let s = Array1::from_shape_simple_fn(k, || {
        if rand::Rng::random::<bool>(&mut rng) {
            1.0
        } else {
            -1.0
        }
    });
    let sd = config.sigma2.sqrt();
    let noise = Array1::from_shape_simple_fn(k, || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * sd
    });
    Instance { h, s, noise, seed }
}

/// `sgn(H x_T + n)` with `sgn(0) = +1`.
pub fn detect(h: ArrayView2<f64>, x_t: ArrayView1<f64>, noise: ArrayView1<f64>) -> Array1<f64> {
    let y = h.dot(&x_t) + noise;
    precoder::quantize(y.view())
}

/// Precodes one instance with the configured backend and returns `x_T`.
pub fn precode(
    inst: &Instance,
    params: &ModelParams,
    backend: SolverBackend,
) -> Result<Array1<f64>> {
    let run = |inner: InnerBackend| {
        let opts = CrqOptions {
            backend: inner,
            ..CrqOptions::default()
        };
        precoder::solve_crq(inst.h.view(), inst.s.view(), params, opts)
    };
    match backend {
        SolverBackend::Convex => Ok(Array1::from(run(InnerBackend::Convex)?.x_t)),
        SolverBackend::Amp => Ok(Array1::from(run(InnerBackend::Amp)?.x_t)),
        SolverBackend::CrossCheck => {
            let convex = run(InnerBackend::Convex)?.x_t;
            let amp = run(InnerBackend::Amp)?.x_t;
            let agree = convex.iter().zip(&amp).filter(|(a, b)| a == b).count() as f64
                / convex.len() as f64;
            if agree < CROSS_CHECK_AGREEMENT {
                return Err(CrqError::NonConvergence {
                    what: "convex/AMP cross-check",
                    iters: 0,
                    residual: 1.0 - agree,
                });
            }
            Ok(Array1::from(convex))
        }
    }
}

/// Per-trial sums; combined in trial order so results do not depend on
/// scheduling.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct TrialStats {
    errors: u64,
    symbols: u64,
    /// sum of `s_k y_k` with `y = H x_T`
    sy: f64,
    /// sums of powers of `r_k = y_k - alpha_bar s_k`
    r1: f64,
    r2: f64,
    r3: f64,
    /// sum of `y_k^2`
    y2: f64,
}

fn run_trial(
    config: &SystemConfig,
    params: &ModelParams,
    alpha_bar: f64,
    seed: u64,
) -> Result<TrialStats> {
    let inst = generate_instance(config, seed);
    let x_t = precode(&inst, params, config.solver)?;
    let y = inst.h.dot(&x_t);
    let s_hat = precoder::quantize((&y + &inst.noise).view());
    let mut st = TrialStats {
        symbols: config.k as u64,
        ..TrialStats::default()
    };
    for ((&yk, &sk), &dk) in y.iter().zip(inst.s.iter()).zip(s_hat.iter()) {
        if dk != sk {
            st.errors += 1;
        }
        st.sy += sk * yk;
        let r = yk - alpha_bar * sk;
        st.r1 += r;
        st.r2 += r * r;
        st.r3 += r * r * r;
        st.y2 += yk * yk;
    }
    Ok(st)
}

/// Estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Empirical statistics of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub sep_hat: f64,
    /// Half-width of the 95% interval; the Clopper-Pearson upper bound when
    /// no error was observed.
    pub sep_ci: f64,
    /// Mean of `s_k h_k^T x_T`.
    pub alpha_hat: Estimate,
    /// Variance of `h_k^T x_T - alpha_bar s_k`.
    pub var_hat: Estimate,
    /// Mean of `(h_k^T x_T)^2`.
    pub second_moment_hat: Estimate,
    /// Skewness of `h_k^T x_T - alpha_bar s_k`.
    pub skew_hat: Estimate,
    pub trials: u64,
    pub errors: u64,
    pub symbols: u64,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    pub theory: AsymptoticCharacterization,
}

impl McReport {
    /// `|alpha_hat - alpha_bar| / stderr` and friends for the moment check.
    pub fn moment_check(&self) -> MomentCheck {
        let t = &self.theory;
        let z = |e: Estimate, target: f64| MomentLine {
            empirical: e.value,
            stderr: e.stderr,
            predicted: target,
            z_score: (e.value - target) / e.stderr,
        };
        MomentCheck {
            mean: z(self.alpha_hat, t.alpha_bar),
            variance: z(self.var_hat, t.beta_bar),
            second_moment: z(
                self.second_moment_hat,
                t.alpha_bar * t.alpha_bar + t.beta_bar,
            ),
            skewness: z(self.skew_hat, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentLine {
    pub empirical: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub z_score: f64,
}

impl MomentLine {
    pub fn within(&self, sigmas: f64) -> bool {
        (self.empirical - self.predicted).abs() <= sigmas * self.stderr
    }
}

/// Empirical moments of `(h_k^T x_T, s_k)` against the scalar model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub mean: MomentLine,
    pub variance: MomentLine,
    pub second_moment: MomentLine,
    pub skewness: MomentLine,
}

fn mean_and_stderr(per_trial: &[f64]) -> (f64, f64) {
    let n = per_trial.len() as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    if per_trial.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = per_trial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// 95% interval half-width for a binomial proportion.
pub fn sep_interval(errors: u64, symbols: u64) -> f64 {
    let n = symbols as f64;
    if errors == 0 {
        1.0 - 0.025f64.powf(1.0 / n)
    } else {
        let p = errors as f64 / n;
        1.96 * (p * (1.0 - p) / n).sqrt()
    }
}

/// End-to-end SEP experiment over `trials` independent instances.
///
/// Trials run in parallel; each one draws from its own stream
/// [`trial_seed`]`(seed, index)` and the statistics are reduced in trial
/// order, so the report is bit-identical for any thread count. Standard
/// errors of the moments are batch means over trials.
pub fn run_sep_experiment(config: &SystemConfig, trials: u64, seed: u64) -> Result<McReport> {
    if trials == 0 {
        return Err(CrqError::InvalidParams("trials must be at least 1".into()));
    }
    let params = config.model_params()?;
    let theory = state_evolution::characterize(&params)?;
    let alpha_bar = theory.alpha_bar;

    let trial_seeds: Vec<u64> = (0..trials).map(|t| trial_seed(seed, t)).collect();
    let stats: Vec<TrialStats> = trial_seeds
        .par_iter()
        .enumerate()
        .map(|(t, &ts)| {
            run_trial(config, &params, alpha_bar, ts).map_err(|e| CrqError::Trial {
                trial: t as u64,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let errors: u64 = stats.iter().map(|s| s.errors).sum();
    let symbols: u64 = stats.iter().map(|s| s.symbols).sum();
    let kf = config.k as f64;

    let per_mean: Vec<f64> = stats.iter().map(|s| s.sy / kf).collect();
    let per_y2: Vec<f64> = stats.iter().map(|s| s.y2 / kf).collect();
    let per_var: Vec<f64> = stats
        .iter()
        .map(|s| s.r2 / kf - (s.r1 / kf).powi(2))
        .collect();
    let per_skew: Vec<f64> = stats
        .iter()
        .map(|s| {
            let m = s.r1 / kf;
            let v = s.r2 / kf - m * m;
            let c3 = s.r3 / kf - 3.0 * m * s.r2 / kf + 2.0 * m * m * m;
            c3 / v.powf(1.5)
        })
        .collect();

    let (alpha, alpha_se) = mean_and_stderr(&per_mean);
    let (y2, y2_se) = mean_and_stderr(&per_y2);
    let (_, var_se) = mean_and_stderr(&per_var);
    let (skew, skew_se) = mean_and_stderr(&per_skew);
    // Pooled variance over every symbol.
    let nsym = symbols as f64;
    let r1: f64 = stats.iter().map(|s| s.r1).sum();
    let r2: f64 = stats.iter().map(|s| s.r2).sum();
    let pooled_var = r2 / nsym - (r1 / nsym).powi(2);

    Ok(McReport {
        sep_hat: errors as f64 / nsym,
        sep_ci: sep_interval(errors, symbols),
        alpha_hat: Estimate {
            value: alpha,
            stderr: alpha_se,
        },
        var_hat: Estimate {
            value: pooled_var,
            stderr: var_se,
        },
        second_moment_hat: Estimate {
            value: y2,
            stderr: y2_se,
        },
        skew_hat: Estimate {
            value: skew,
            stderr: skew_se,
        },
        trials,
        errors,
        symbols,
        seed,
        trial_seeds,
        theory,
    })
}

/// Moment statistics of the received signal against the scalar model.
pub fn moment_check(config: &SystemConfig, trials: u64, seed: u64) -> Result<MomentCheck> {
    Ok(run_sep_experiment(config, trials, seed)?.moment_check())
}

/// One grid point of a sweep. Dimensions are only needed for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub params: ModelParams,
    pub n: Option<usize>,
    pub k: Option<usize>,
    #[serde(default)]
    pub solver: SolverBackend,
}

impl SweepPoint {
    pub fn system(&self) -> Result<SystemConfig> {
        match (self.n, self.k) {
            (Some(n), Some(k)) => Ok(SystemConfig {
                n,
                k,
                sigma2: self.params.sigma2,
                rho: self.params.rho,
                lambda: self.params.lambda,
                squid: self.params.squid,
                solver: self.solver,
            }),
            _ => Err(CrqError::InvalidParams("simulation needs N and K".into())),
        }
    }
}

impl From<SystemConfig> for SweepPoint {
    fn from(c: SystemConfig) -> Self {
        let params = ModelParams {
            delta: c.delta(),
            rho: c.rho,
            lambda: c.lambda,
            sigma2: c.sigma2,
            squid: c.squid,
        };
        Self {
            params,
            n: Some(c.n),
            k: Some(c.k),
            solver: c.solver,
        }
    }
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub theory: Option<AsymptoticCharacterization>,
    pub report: Option<McReport>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn sep_theory(&self) -> Option<f64> {
        self.theory.map(|t| t.sep)
    }

    pub fn sep_hat(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.sep_hat)
    }
}

/// Theory and (when `trials > 0`) simulation at every grid point, in grid
/// order. Failures are recorded on the row and the sweep continues.
pub fn sweep(grid: &[SweepPoint], trials: u64, seed: u64) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(CrqError::InvalidParams("sweep grid is empty".into()));
    }
    Ok(grid.iter().map(|p| sweep_point(p, trials, seed)).collect())
}

pub fn sweep_point(point: &SweepPoint, trials: u64, seed: u64) -> SweepRow {
    let mut row = SweepRow {
        point: *point,
        theory: None,
        report: None,
        error: None,
    };
    let theory = point
        .params
        .validate()
        .and_then(|_| state_evolution::characterize(&point.params));
    match theory {
        Ok(t) => row.theory = Some(t),
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    if trials > 0 {
        match point
            .system()
            .and_then(|c| run_sep_experiment(&c, trials, seed))
        {
            Ok(r) => row.report = Some(r),
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    row
}
