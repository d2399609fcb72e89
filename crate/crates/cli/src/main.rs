//! Command line front end: builds distributional representations from raw
//! readings, compares them with total activity counts in survey-weighted
//! regressions, classifies a binary outcome and simulates test cohorts.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{KernelName, RunConfig};

#[derive(Parser)]
#[command(name = "actdist", version, about = "Distributional analysis of activity counts under survey designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantile grids and per-subject summaries from long-format readings.
    BuildDist(Flags),
    /// Leave-one-out R² of the distributional representation against TAC.
    Regress(Flags),
    /// Binary outcome classification, risk groups and group profiles.
    Classify(Flags),
    /// Synthetic population and survey sample.
    Simulate(Flags),
    /// Predictions from a model file written by `regress`.
    Predict(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Readings CSV (build-dist) or quantiles CSV (regress, classify, predict).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<PathBuf>,
    /// Summary CSV with TAC; defaults to summary.csv next to --input.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of quantile levels.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    censor_lower: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    censor_upper: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Response columns, comma separated or repeated.
    #[arg(long = "response", value_delimiter = ',')]
    responses: Vec<String>,
    /// Binary outcome column for classify.
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    bandwidth_grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    kernel: Option<KernelName>,
}

impl Flags {
    fn resolve(self) -> anyhow::Result<(RunConfig, bool)> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    c.$field = self.$field;
                }
            )*};
        }
        set!(m, threshold, seed, outcome, lambda_grid, kernel);
        set_opt!(input, subjects, summary, model, out, censor_lower, censor_upper, bandwidth, bandwidth_grid);
        if !self.responses.is_empty() {
            c.responses = self.responses;
        }
        c.validate()?;
        Ok((c, self.print_config))
    }
}

/// A validation failure: bad content, configuration or arguments.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// 2 for validation failures, 1 for I/O and anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<actdist::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<actdist::io::IoError>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (flags, cmd): (Flags, fn(&RunConfig) -> anyhow::Result<Vec<PathBuf>>) = match cli.command {
        Command::BuildDist(f) => (f, commands::build_dist),
        Command::Regress(f) => (f, commands::regress),
        Command::Classify(f) => (f, commands::classify),
        Command::Simulate(f) => (f, commands::simulate),
        Command::Predict(f) => (f, commands::predict),
    };
    let (config, print) = flags.resolve()?;
    if print {
        print!("{}", config.to_toml());
        return Ok(());
    }
    for path in cmd(&config)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
