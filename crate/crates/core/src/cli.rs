//! Experiment configuration, run records and the `characterize`,
//! `simulate` and `sweep` subcommands.
//!
//! A TOML config file supplies defaults; command-line flags override it.
//! Tables are written as CSV and every run also leaves a JSON record next to
//! the CSV that echoes the resolved configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::CrqError;
use crate::precoder::squid_preset;
use crate::simulation::{self, SolverBackend, SweepPoint, SweepRow};
use crate::state_evolution::{self, AsymptoticCharacterization, ModelParams};

/// Column order of the simulation and sweep tables.
pub const SIMULATE_COLUMNS: [&str; 15] = [
    "snr_db",
    "rho",
    "lambda",
    "delta",
    "n",
    "k",
    "trials",
    "sep_theory",
    "sep_hat",
    "sep_ci",
    "alpha_bar",
    "alpha_hat",
    "beta_bar",
    "var_hat",
    "seed",
];

/// Column order of the characterization table.
pub const CHARACTERIZE_COLUMNS: [&str; 12] = [
    "snr_db",
    "rho",
    "lambda",
    "delta",
    "sigma2",
    "a_star",
    "tau2_star",
    "gamma_star",
    "alpha_bar",
    "beta_bar",
    "snr_bar",
    "sep_theory",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(#[from] CrqError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} points failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    /// 1 for configuration problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(e) if !e.is_numerical() => 1,
            CliError::Numerical(_) | CliError::Partial { .. } => 2,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

/// Parameters swept by `--grid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridParam {
    Rho,
    Lambda,
    SnrDb,
    Delta,
}

/// `param=start:stop:step` or `param=v1,v2,...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub param: GridParam,
    pub values: Vec<f64>,
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, body) = s
            .split_once('=')
            .ok_or_else(|| format!("grid `{s}`: expected param=spec"))?;
        let param = match name.trim() {
            "rho" => GridParam::Rho,
            "lambda" => GridParam::Lambda,
            "snr_db" | "snr-db" => GridParam::SnrDb,
            "delta" => GridParam::Delta,
            other => {
                return Err(format!(
                    "grid parameter `{other}` is not one of rho, lambda, snr_db, delta"
                ))
            }
        };
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("grid `{s}`: {e}"))
        };
        let values = if body.contains(':') {
            let parts: Vec<&str> = body.split(':').collect();
            if parts.len() != 3 {
                return Err(format!("grid `{s}`: range must be start:stop:step"));
            }
            let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(format!("grid `{s}`: need step > 0 and stop >= start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=count)
                .map(|i| ((start + step * i as f64) * 1e12).round() / 1e12)
                .collect()
        } else {
            body.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err(format!("grid `{s}` has no points"));
        }
        Ok(GridSpec { param, values })
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.param {
            GridParam::Rho => "rho",
            GridParam::Lambda => "lambda",
            GridParam::SnrDb => "snr_db",
            GridParam::Delta => "delta",
        };
        let vals: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        write!(f, "{name}={}", vals.join(","))
    }
}

/// Experiment configuration as written in a config file or on the command
/// line. Every field is optional here; [`ExperimentConfig::resolve`]
/// validates the combination.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub delta: Option<f64>,
    pub sigma2: Option<f64>,
    pub snr_db: Option<f64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub solver: Option<SolverBackend>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub squid: bool,
    #[serde(default)]
    pub theory_only: bool,
    #[serde(default)]
    pub grid: Vec<String>,
}

/// A validated point: model parameters plus optional dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub point: SweepPoint,
    /// `None` when noise was given as `sigma2 = 0`.
    pub snr_db: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Overlays `flags` on `self`; any field set in `flags` wins. Setting one
    /// of `sigma2`/`snr_db` by flag clears the other.
    pub fn merged_with(mut self, flags: &ExperimentConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f.clone(); } )* };
        }
        take!(n, k, delta, rho, lambda, solver, trials, seed, out);
        if flags.sigma2.is_some() || flags.snr_db.is_some() {
            self.sigma2 = flags.sigma2;
            self.snr_db = flags.snr_db;
        }
        self.squid |= flags.squid;
        self.theory_only |= flags.theory_only;
        if !flags.grid.is_empty() {
            self.grid = flags.grid.clone();
        }
        self
    }

    pub fn grids(&self) -> Result<Vec<GridSpec>, CliError> {
        self.grid
            .iter()
            .map(|g| g.parse::<GridSpec>().map_err(CliError::Config))
            .collect()
    }

    /// Validates the configuration into model parameters and dimensions.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let sigma2 = match (self.sigma2, self.snr_db) {
            (Some(_), Some(_)) => {
                return config_err("give exactly one of sigma2 and snr_db, not both")
            }
            (None, None) => return config_err("noise level missing: give sigma2 or snr_db"),
            (Some(s), None) => {
                if !(s.is_finite() && s >= 0.0) {
                    return config_err(format!("sigma2 must be nonnegative, got {s}"));
                }
                s
            }
            (None, Some(db)) => {
                if !db.is_finite() {
                    return config_err(format!("snr_db must be finite, got {db}"));
                }
                snr_db_to_sigma2(db)
            }
        };
        let snr_db = self
            .snr_db
            .or_else(|| (sigma2 > 0.0).then(|| -10.0 * sigma2.log10()));

        let (n, k, delta) = resolve_dims(self.n, self.k, self.delta)?;
        let solver = self.solver.unwrap_or_default();

        let params = if self.squid {
            if self.lambda.is_some() || self.rho.is_some() {
                return config_err("--squid fixes rho and lambda; do not set them");
            }
            match (n, k) {
                (Some(n), Some(k)) => squid_preset(n, k, sigma2)?,
                _ => {
                    let lambda = sigma2 * delta;
                    if lambda == 0.0 {
                        return Err(CrqError::DegenerateLambda.into());
                    }
                    ModelParams {
                        delta,
                        rho: 0.0,
                        lambda,
                        sigma2,
                        squid: true,
                    }
                }
            }
        } else {
            let Some(lambda) = self.lambda else {
                return config_err("lambda missing");
            };
            let Some(rho) = self.rho else {
                return config_err("rho missing");
            };
            ModelParams::new(delta, rho, lambda, sigma2)
                .map_err(|e| CliError::Config(e.to_string()))?
        };
        Ok(Resolved {
            point: SweepPoint {
                params,
                n,
                k,
                solver,
            },
            snr_db,
        })
    }

    /// Resolves every point of the (up to two-dimensional) grid in row-major
    /// order, first grid outermost.
    pub fn resolve_grid(&self) -> Result<Vec<Resolved>, CliError> {
        let grids = self.grids()?;
        if grids.len() > 2 {
            return config_err("at most two grid parameters are supported");
        }
        if grids.len() == 2 && grids[0].param == grids[1].param {
            return config_err("the two grid parameters must differ");
        }
        let mut combos: Vec<Vec<(GridParam, f64)>> = vec![vec![]];
        for g in &grids {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    g.values.iter().map(move |&v| {
                        let mut c = c.clone();
                        c.push((g.param, v));
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|combo| {
                let mut cfg = self.clone();
                for (param, v) in combo {
                    match param {
                        GridParam::Rho => cfg.rho = Some(v),
                        GridParam::Lambda => cfg.lambda = Some(v),
                        GridParam::SnrDb => {
                            cfg.snr_db = Some(v);
                            cfg.sigma2 = None;
                        }
                        GridParam::Delta => {
                            cfg.delta = Some(v);
                            // K follows from delta and N.
                            cfg.k = None;
                        }
                    }
                }
                cfg.resolve()
            })
            .collect()
    }
}

fn resolve_dims(
    n: Option<usize>,
    k: Option<usize>,
    delta: Option<f64>,
) -> Result<(Option<usize>, Option<usize>, f64), CliError> {
    if n == Some(0) || k == Some(0) {
        return config_err("n and k must be positive");
    }
    if let Some(d) = delta {
        if !(d.is_finite() && d > 0.0) {
            return config_err(format!("delta must be positive, got {d}"));
        }
    }
    match (n, k, delta) {
        (Some(n), Some(k), None) => Ok((Some(n), Some(k), k as f64 / n as f64)),
        (Some(n), Some(k), Some(d)) => {
            if ((n as f64) * d - k as f64).abs() > 1e-9 * k as f64 {
                return config_err(format!(
                    "inconsistent dimensions: n*delta = {} but k = {k}",
                    n as f64 * d
                ));
            }
            Ok((Some(n), Some(k), k as f64 / n as f64))
        }
        (Some(n), None, Some(d)) => {
            let k = (n as f64 * d).round();
            if k < 1.0 || (k - n as f64 * d).abs() > 1e-9 * k {
                return config_err(format!(
                    "n*delta = {} is not a positive integer",
                    n as f64 * d
                ));
            }
            Ok((Some(n), Some(k as usize), k / n as f64))
        }
        (None, Some(k), Some(d)) => {
            let n = (k as f64 / d).round();
            if n < 1.0 || (n * d - k as f64).abs() > 1e-9 * k as f64 {
                return config_err(format!(
                    "k/delta = {} is not a positive integer",
                    k as f64 / d
                ));
            }
            Ok((Some(n as usize), Some(k), k as f64 / n))
        }
        (None, None, Some(d)) => Ok((None, None, d)),
        _ => config_err("dimensions missing: give n and k, or delta with at most one of them"),
    }
}

/// `sigma2 = 10^(-snr_db / 10)`: symbols have unit power.
pub fn snr_db_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Payload of a [`RunRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunPayload {
    Characterization {
        params: ModelParams,
        result: AsymptoticCharacterization,
    },
    Simulation {
        rows: Vec<SweepRow>,
    },
    Sweep {
        rows: Vec<SweepRow>,
    },
}

/// Everything needed to reproduce and interpret one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub payload: RunPayload,
    pub failures: Vec<String>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("run record: {e}")))
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn fmt_opt_u(v: Option<usize>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_line(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

/// Renders rows in the [`SIMULATE_COLUMNS`] layout. Values that were not
/// computed are left empty; values of failed points are `NaN`.
pub fn simulation_csv(rows: &[(Option<f64>, SweepRow)], trials: u64, seed: u64) -> String {
    let mut out = csv_line(&SIMULATE_COLUMNS.map(String::from));
    for (snr_db, row) in rows {
        let p = row.point.params;
        let failed = row.error.is_some();
        let missing = |v: Option<f64>, wanted: bool| -> String {
            match v {
                Some(x) => x.to_string(),
                None if failed && wanted => "NaN".into(),
                None => String::new(),
            }
        };
        let sim = trials > 0;
        let rep = row.report.as_ref();
        let th = row.theory.as_ref();
        out.push_str(&csv_line(&[
            fmt_opt(*snr_db),
            p.rho.to_string(),
            p.lambda.to_string(),
            p.delta.to_string(),
            fmt_opt_u(row.point.n),
            fmt_opt_u(row.point.k),
            if sim {
                trials.to_string()
            } else {
                String::new()
            },
            missing(th.map(|t| t.sep), true),
            missing(rep.map(|r| r.sep_hat), sim),
            missing(rep.map(|r| r.sep_ci), sim),
            missing(th.map(|t| t.alpha_bar), true),
            missing(rep.map(|r| r.alpha_hat.value), sim),
            missing(th.map(|t| t.beta_bar), true),
            missing(rep.map(|r| r.var_hat.value), sim),
            if sim { seed.to_string() } else { String::new() },
        ]));
    }
    out
}

pub fn characterization_csv(
    snr_db: Option<f64>,
    p: &ModelParams,
    c: &AsymptoticCharacterization,
) -> String {
    let mut out = csv_line(&CHARACTERIZE_COLUMNS.map(String::from));
    out.push_str(&csv_line(&[
        fmt_opt(snr_db),
        p.rho.to_string(),
        p.lambda.to_string(),
        p.delta.to_string(),
        p.sigma2.to_string(),
        c.a_star.to_string(),
        c.fp_star.tau2.to_string(),
        c.fp_star.gamma.to_string(),
        c.alpha_bar.to_string(),
        c.beta_bar.to_string(),
        c.snr_bar.to_string(),
        c.sep.to_string(),
    ]));
    out
}

/// Path of the JSON record written next to `out`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        out.with_extension("record.json")
    } else {
        out.with_extension("json")
    }
}

/// Output of a subcommand: the table text plus the record.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub csv: String,
    pub summary: String,
    pub record: RunRecord,
}

impl CommandOutput {
    /// Writes the CSV and the JSON record when `out` is set.
    pub fn write(&self, out: Option<&Path>) -> Result<(), CliError> {
        if let Some(path) = out {
            std::fs::write(path, &self.csv)?;
            std::fs::write(sidecar_path(path), self.record.to_json())?;
        }
        Ok(())
    }

    /// `Err(Partial)` when some grid points failed.
    pub fn status(&self) -> Result<(), CliError> {
        let total = match &self.record.payload {
            RunPayload::Simulation { rows } | RunPayload::Sweep { rows } => rows.len(),
            RunPayload::Characterization { .. } => 1,
        };
        if self.record.failures.is_empty() {
            Ok(())
        } else {
            Err(CliError::Partial {
                failed: self.record.failures.len(),
                total,
            })
        }
    }
}

fn record(
    command: &str,
    config: &ExperimentConfig,
    started: u128,
    payload: RunPayload,
    failures: Vec<String>,
) -> RunRecord {
    RunRecord {
        tool: "crq".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: config.clone(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        payload,
        failures,
    }
}

/// `a*`, the fixed point there, the scalar channel constants and the
/// predicted SEP for one configuration.
pub fn cmd_characterize(config: &ExperimentConfig) -> Result<CommandOutput, CliError> {
    let started = now_ms();
    let resolved = config.resolve()?;
    let params = resolved.point.params;
    let c = state_evolution::characterize(&params)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "a_star     = {}", c.a_star);
    let _ = writeln!(summary, "tau2_star  = {}", c.fp_star.tau2);
    let _ = writeln!(summary, "gamma_star = {}", c.fp_star.gamma);
    let _ = writeln!(summary, "alpha_bar  = {}", c.alpha_bar);
    let _ = writeln!(summary, "beta_bar   = {}", c.beta_bar);
    let _ = writeln!(summary, "snr_bar    = {}", c.snr_bar);
    let _ = writeln!(summary, "sep        = {}", c.sep);
    if params.is_continuation() {
        let _ = writeln!(summary, "note: rho = 0 evaluated as rho -> 0+ continuation");
    }
    Ok(CommandOutput {
        csv: characterization_csv(resolved.snr_db, &params, &c),
        summary,
        record: record(
            "characterize",
            config,
            started,
            RunPayload::Characterization { params, result: c },
            vec![],
        ),
    })
}

type PointRows = Vec<(Option<f64>, SweepRow)>;

fn run_points(
    config: &ExperimentConfig,
    trials: u64,
) -> Result<(PointRows, Vec<String>), CliError> {
    let points = config.resolve_grid()?;
    let seed = config.seed.unwrap_or(0);
    let mut rows = Vec::with_capacity(points.len());
    let mut failures = vec![];
    for (i, r) in points.iter().enumerate() {
        let row = simulation::sweep_point(&r.point, trials, seed);
        if let Some(e) = &row.error {
            failures.push(format!("point {i}: {e}"));
        }
        rows.push((r.snr_db, row));
    }
    Ok((rows, failures))
}

/// Monte Carlo SEP against the prediction; one row per grid point (a single
/// row without a grid).
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<CommandOutput, CliError> {
    let started = now_ms();
    let trials = match config.trials {
        Some(0) | None => return config_err("simulate needs trials >= 1"),
        Some(t) => t,
    };
    let base = config.resolve()?;
    if base.point.n.is_none() {
        return config_err("simulate needs the dimensions n and k");
    }
    let (rows, failures) = run_points(config, trials)?;
    let csv = simulation_csv(&rows, trials, config.seed.unwrap_or(0));
    let summary = summarize(&rows);
    let rows = rows.into_iter().map(|(_, r)| r).collect();
    Ok(CommandOutput {
        csv,
        summary,
        record: record(
            "simulate",
            config,
            started,
            RunPayload::Simulation { rows },
            failures,
        ),
    })
}

/// Theory (and optionally simulation) over a one- or two-parameter grid.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<CommandOutput, CliError> {
    let started = now_ms();
    if config.grid.is_empty() {
        return config_err("sweep needs at least one --grid");
    }
    let trials = if config.theory_only {
        0
    } else {
        config.trials.unwrap_or(0)
    };
    if !config.theory_only && trials == 0 {
        return config_err("sweep needs trials >= 1 or --theory-only");
    }
    let (rows, failures) = run_points(config, trials)?;
    let csv = simulation_csv(&rows, trials, config.seed.unwrap_or(0));
    let summary = summarize(&rows);
    let rows = rows.into_iter().map(|(_, r)| r).collect();
    Ok(CommandOutput {
        csv,
        summary,
        record: record(
            "sweep",
            config,
            started,
            RunPayload::Sweep { rows },
            failures,
        ),
    })
}

fn summarize(rows: &[(Option<f64>, SweepRow)]) -> String {
    let mut s = String::new();
    for (snr, row) in rows {
        let p = row.point.params;
        let _ = write!(
            s,
            "snr_db={} rho={} lambda={} delta={}",
            fmt_opt(*snr),
            p.rho,
            p.lambda,
            p.delta
        );
        if let Some(t) = row.sep_theory() {
            let _ = write!(s, " sep_theory={t:.4e}");
        }
        if let Some(r) = &row.report {
            let _ = write!(s, " sep_hat={:.4e} ci={:.2e}", r.sep_hat, r.sep_ci);
        }
        if let Some(e) = &row.error {
            let _ = write!(s, " FAILED: {e}");
        }
        s.push('\n');
    }
    s
}
