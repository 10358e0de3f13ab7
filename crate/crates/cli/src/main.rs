use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod classify;
mod config;
mod curve;
mod embed;
mod error;
mod evaluate;
mod sts;

use error::CliError;

/// Few-shot visual inspection with pretrained image embeddings.
#[derive(Parser)]
#[command(name = "inspect", version)]
struct Cli {
    /// Worker threads for embedding and classification (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a directory of labeled images into a store.
    Embed(embed::EmbedArgs),
    /// Few-shot classify a test store against an exemplar store.
    Classify(classify::ClassifyArgs),
    /// Classify a test store against text prompts.
    Zeroshot(classify::ZeroShotArgs),
    /// Score a results CSV against truth labels.
    Evaluate(evaluate::EvaluateArgs),
    /// Metrics as a function of learning set size.
    LearningCurve(curve::CurveArgs),
    /// Generate a synthetic textured-surface dataset.
    Sts(sts::StsArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(anyhow::Error::from)?;
    }
    match cli.command {
        Command::Embed(args) => embed::run(args),
        Command::Classify(args) => classify::run_few_shot(args),
        Command::Zeroshot(args) => classify::run_zero_shot(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::LearningCurve(args) => curve::run(args),
        Command::Sts(args) => sts::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
