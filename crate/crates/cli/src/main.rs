//! `focus`: synthetic data, training, evaluation, compression traces,
//! ablations, benchmarks and gradient checks from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Errors are printed to stderr as one JSON object.

mod commands;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "focus", version, about = "Few-shot slide classification with visual token compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// JSON run configuration. Missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override such as `k_shot=8` or `ablation.svtc=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted class signal.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings. Missing keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train and evaluate over resampled folds.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on the manifest's test split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compress one bag and write its trace as JSON.
    Compress {
        #[arg(long)]
        bag: PathBuf,
        /// Knowledge prompt embeddings in the bag format.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Trained parameters; supplies learnable prompts and shared scoring
        /// projections.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the five cumulative ablation variants.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Time each compression stage on random bags.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "10000,50000,100000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        /// Best-of count per measurement.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// CSV destination; printed to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of the model's gradients on a random bag.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        tokens: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Convert a directory of raw per-slide matrices into a dataset.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train, validation and test proportions.
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
        split: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("FOCUS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("FOCUS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { out, spec, overrides } => commands::synth(&out, spec.as_deref(), &overrides),
        Command::Train { manifest, out, config } => commands::train(&manifest, &out, &config),
        Command::Eval {
            manifest,
            checkpoint,
            out,
            config,
        } => commands::eval(&manifest, &checkpoint, &out, &config),
        Command::Compress {
            bag,
            prompts,
            checkpoint,
            out,
            config,
        } => commands::compress(&bag, prompts.as_deref(), checkpoint.as_deref(), &out, &config),
        Command::Ablate { manifest, out, config } => commands::ablate(&manifest, &out, &config),
        Command::Bench {
            sizes,
            dim,
            repeats,
            out,
            config,
        } => commands::bench(&sizes, dim, repeats, out.as_deref(), &config),
        Command::Gradcheck {
            tokens,
            dim,
            classes,
            tolerance,
            seed,
            out,
            config,
        } => commands::gradcheck(tokens, dim, classes, tolerance, seed, out.as_deref(), &config),
        Command::Convert { input, out, split, seed } => commands::convert(&input, &out, &split, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code)
        }
    }
}
