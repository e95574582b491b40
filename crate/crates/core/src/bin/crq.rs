use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crq::cli::{self, CliError, CommandOutput, ExperimentConfig};
use crq::simulation::SolverBackend;

/// CRQ one-bit precoding: asymptotic analysis and Monte Carlo validation.
#[derive(Debug, Parser)]
#[command(name = "crq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Asymptotic characterization and predicted SEP.
    Characterize(Flags),
    /// Monte Carlo SEP and moments against the prediction.
    Simulate(Flags),
    /// Theory (and optionally simulation) over a parameter grid.
    Sweep(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Noise level as 10 log10(1 / sigma2).
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Load ratio K/N.
    #[arg(long)]
    delta: Option<f64>,
    /// Number of BS antennas.
    #[arg(long)]
    n: Option<usize>,
    /// Number of users.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    /// SQUID preset: rho = 0, lambda = sigma2 K / N.
    #[arg(long)]
    squid: bool,
    /// CSV output path; the JSON run record goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip Monte Carlo in sweeps.
    #[arg(long)]
    theory_only: bool,
    /// Grid over rho, lambda, snr_db or delta: `param=start:stop:step` or
    /// `param=v1,v2,...`. Repeat for a two-dimensional grid.
    #[arg(long)]
    grid: Vec<String>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Solver {
    Convex,
    Amp,
    CrossCheck,
}

impl Flags {
    fn into_config(self) -> Result<ExperimentConfig, CliError> {
        let file = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            n: self.n,
            k: self.k,
            delta: self.delta,
            sigma2: self.sigma2,
            snr_db: self.snr_db,
            rho: self.rho,
            lambda: self.lambda,
            solver: self.solver.map(|s| match s {
                Solver::Convex => SolverBackend::Convex,
                Solver::Amp => SolverBackend::Amp,
                Solver::CrossCheck => SolverBackend::CrossCheck,
            }),
            trials: self.trials,
            seed: self.seed,
            out: self.out,
            squid: self.squid,
            theory_only: self.theory_only,
            grid: self.grid,
        };
        if flags.sigma2.is_some() && flags.snr_db.is_some() {
            return Err(CliError::Config(
                "give exactly one of --sigma2 and --snr-db".into(),
            ));
        }
        Ok(file.merged_with(&flags))
    }
}

type Handler = fn(&ExperimentConfig) -> Result<CommandOutput, CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (flags, cmd): (Flags, Handler) = match cli.command {
        Command::Characterize(f) => (f, cli::cmd_characterize),
        Command::Simulate(f) => (f, cli::cmd_simulate),
        Command::Sweep(f) => (f, cli::cmd_sweep),
    };
    let config = flags.into_config()?;
    let output = cmd(&config)?;
    eprint!("{}", output.summary);
    match &config.out {
        Some(path) => output.write(Some(path))?,
        None => print!("{}", output.csv),
    }
    output.status()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
