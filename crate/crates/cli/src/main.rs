use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "lorentzkit", version, about = "Hyperbolic EEG decoding toolkit: synthetic data, training, source-free adaptation and diagnostics")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory; must be empty or missing unless --force is given.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads for fold-parallel work (fallback: LORENTZKIT_THREADS).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Config override such as `train.epochs=20`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pseudo-EEG dataset.
    Gen {
        #[arg(long)]
        domains: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_cell: Option<usize>,
        /// Shift strength in [0, 1]; sets every shift component.
        #[arg(long)]
        shift: Option<f64>,
    },
    /// Fit a model on the source domains.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[command(flatten)]
        split: Split,
    },
    /// Estimate statistics for unlabeled target domains.
    Adapt {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        split: Split,
    },
    /// Score target domains, or cross-validate when no checkpoint is given.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        split: Split,
    },
    /// Sampled Gromov δ-hyperbolicity of an embedding file or dataset.
    Delta {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<Metric>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 10)]
        batches: usize,
    },
    /// Reference-free horospherical sliced-Wasserstein estimate between two embedding files.
    Hhsw {
        #[arg(value_name = "A")]
        a: PathBuf,
        #[arg(value_name = "B")]
        b: PathBuf,
        #[arg(long, default_value_t = 1000)]
        slices: usize,
        #[arg(long, default_value_t = 2.0)]
        exponent: f64,
    },
    /// Finite-difference check of every layer's backward rule.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = lorentzkit::gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Registers a layer with a deliberately wrong backward rule.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

#[derive(Debug, Args)]
pub struct Split {
    /// Comma-separated source domain ids (overrides folds.sources).
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<u32>>,
    /// Comma-separated target domain ids (overrides folds.targets).
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Lorentz,
    Euclidean,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
