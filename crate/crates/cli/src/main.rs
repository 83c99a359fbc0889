//! `metapu`: dataset generation, training, inference, evaluation and the
//! receptive-field probe.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod analyze;
mod config;
mod dataset;
mod eval;
mod exit;
mod provenance;
mod train;
mod upsample;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "metapu", version, about = "Arbitrary-scale point cloud upsampling")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base network profile when the config does not set one.
    #[arg(long, global = true, value_enum, default_value_t = config::Profile::Tiny)]
    pub profile: config::Profile,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat Sinkhorn non-convergence as a failure (exit 4).
    #[arg(long, global = true)]
    pub strict: bool,
    /// Worker threads; 1 gives the reference single-threaded schedule.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract training patches and test shapes into a manifest directory.
    MakeDataset(dataset::MakeDatasetArgs),
    /// Train a model on a dataset and write a checkpoint plus loss trace.
    Train(train::TrainArgs),
    /// Upsample one XYZ cloud by a scale factor.
    Upsample(upsample::UpsampleArgs),
    /// Evaluate a checkpoint on the test split at several scales.
    Eval(eval::EvalArgs),
    /// Label the receptive field of one output point at several scales.
    AnalyzeRf(analyze::AnalyzeArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| exit::usage(format!("cannot configure {n} threads: {e}")))?;
    }
    match cli.command {
        Command::MakeDataset(a) => dataset::run(&cli.common, a),
        Command::Train(a) => train::run(&cli.common, a),
        Command::Upsample(a) => upsample::run(&cli.common, a),
        Command::Eval(a) => eval::run(&cli.common, a),
        Command::AnalyzeRf(a) => analyze::run(&cli.common, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code_for(&err))
        }
    }
}
