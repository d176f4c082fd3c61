//! `eigendist`: compute, verify and analyse Wasserstein eigendistances of
//! finite Markov chains given as JSON files.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "eigendist", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Chain file: {"labels": [...], "matrix": [[...]]}.
    #[arg(long, global = true)]
    pub chain: Option<PathBuf>,
    /// Metric file: {"matrix": [[...]]}.
    #[arg(long, global = true)]
    pub metric: Option<PathBuf>,
    /// Wasserstein exponent.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub p: f64,
    /// Fixed-point stopping tolerance (sup-norm change).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo sample count; simulations run only when given.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Auto,
    Exhaustive,
    Heuristic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalized fixed-point iteration; `--metric` sets the initial metric.
    Eigendist,
    /// Plain iteration from the discrete metric (curvature-zero limit).
    Maximal,
    /// Curvature and residual of `--metric`.
    Verify,
    /// Coupling operator of the eigendistance and its irreducibility.
    Coupling {
        /// Start pair for an optional simulation (with `--samples`).
        #[arg(long, default_value_t = 0)]
        x0: usize,
        #[arg(long, default_value_t = 1)]
        y0: usize,
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
    /// Search for a nontrivial lumpable partition.
    Lumpable {
        #[arg(long, value_enum, default_value_t = Mode::Auto)]
        mode: Mode,
    },
    /// Quotient chain by `--partition`, or by a found partition.
    Quotient {
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Concentration constants for a `p = 1` eigendistance `--metric`.
    Concentration {
        /// JSON array of function values; defaults to `rho(x0, .)`.
        #[arg(long)]
        function: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        x0: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Emit a generated chain (and its closed-form metric).
    Example {
        #[command(subcommand)]
        family: Family,
        /// Also write the family's closed-form eigendistance here.
        #[arg(long, global = true)]
        metric_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum Family {
    LazyTorus {
        #[arg(long)]
        l: usize,
        #[arg(long)]
        q: f64,
    },
    SpinFlip {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: f64,
        /// Comma-separated coordinate weights for the metric.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    AbsorbingRuin {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: f64,
    },
    RandomLazy {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.6)]
        min_selfloop: f64,
    },
    /// Product of two families given as JSON, e.g. '{"family":"lazy_torus","l":3,"q":0.2}'.
    Product {
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
    },
}

fn init_threads() {
    let Ok(value) = std::env::var("EIGENDIST_THREADS") else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring EIGENDIST_THREADS={value:?}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_threads();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
