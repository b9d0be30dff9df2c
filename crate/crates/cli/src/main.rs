//! `amlmc`: reproduces the moment-error, variance, cost and timing
//! experiments as CSV and JSON files.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use amlmc_core::experiments::{cmd_bench, cmd_mse, cmd_run, cmd_variance, ExperimentConfig, ExperimentError};
use amlmc_core::inverse_cdf::ApproxSpec;
use amlmc_core::mlmc::MlmcError;
use amlmc_core::sde::Payoff;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    /// Moment errors of the approximations over a size sweep (CSV).
    Mse,
    /// Level variances of exact, approximate and correction terms (CSV).
    Variance,
    /// Standard and nested MLMC to a target accuracy (JSON).
    Run,
    /// Timing of exact and approximate inverse CDFs (JSON).
    Bench,
}

#[derive(Debug, Parser)]
#[command(name = "amlmc", version, about = "Nested MLMC with approximate Normal random variables")]
struct Cli {
    #[arg(value_enum)]
    experiment: Experiment,
    /// JSON configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "AMLMC_SEED")]
    seed: Option<u64>,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Approximation, e.g. `quantized:q=10`, `dyadic:r=0.5,K=16`, `poly:K=4`. Repeatable.
    #[arg(long)]
    approx: Vec<ApproxSpec>,
    /// Payoff, e.g. `identity` or `call:K=1`. Repeatable.
    #[arg(long)]
    payoff: Vec<Payoff>,
    /// Target RMS error for `run`.
    #[arg(long)]
    eps: Option<f64>,
    /// Finest level for `variance`.
    #[arg(long)]
    levels: Option<u32>,
    /// Samples per level for `variance`.
    #[arg(long)]
    samples: Option<u64>,
    /// Worker threads; all cores if omitted.
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Io(String),
    Convergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
            Failure::Convergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Convergence(m) => m,
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Mlmc(MlmcError::ConvergenceFailure { .. }) => Failure::Convergence(e.to_string()),
            ExperimentError::Csv(_) => Failure::Io(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.approx.is_empty() {
        cfg.approximations = cli.approx.clone();
    }
    if !cli.payoff.is_empty() {
        cfg.payoffs = cli.payoff.clone();
    }
    if let Some(eps) = cli.eps {
        cfg.epsilon = eps;
    }
    if let Some(levels) = cli.levels {
        cfg.levels = levels;
    }
    if let Some(samples) = cli.samples {
        cfg.samples = samples;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot start {threads} threads: {e}")))?;
    }
    let cfg = load_config(cli)?;
    let output = match cli.experiment {
        Experiment::Mse => cmd_mse(&cfg)?,
        Experiment::Variance => cmd_variance(&cfg)?,
        Experiment::Run => cmd_run(&cfg)?,
        Experiment::Bench => cmd_bench(&cfg)?,
    };
    match &cli.out {
        Some(path) => fs::write(path, output).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout()
            .lock()
            .write_all(output.as_bytes())
            .map_err(|e| Failure::Io(format!("cannot write output: {e}"))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("amlmc: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
