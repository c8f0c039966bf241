use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Train, sample and evaluate multi-prior warping point-cloud generators.
#[derive(Parser, Debug)]
#[command(name = "warpgen", version)]
pub struct Cli {
    /// Suppress progress output on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a generator/critic pair and report metrics on a held-out split.
    Train(commands::TrainArgs),
    /// Sample clouds from a checkpoint.
    Generate(commands::GenerateArgs),
    /// Compute MMD, COV and uniformity between two shape sets.
    Eval(commands::EvalArgs),
    /// Export the prior grids as one colored cloud.
    Priors(commands::PriorArgs),
}

/// Bad flag values or combinations; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("WARPGEN_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().map_err(|_| {
        usage(format!(
            "WARPGEN_THREADS must be a non-negative integer, got `{raw}`"
        ))
    })?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let quiet = cli.quiet;
    match cli.command {
        Command::Train(a) => commands::train(a, quiet),
        Command::Generate(a) => commands::generate(a, quiet),
        Command::Eval(a) => commands::eval(a, quiet),
        Command::Priors(a) => commands::priors(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

pub fn ensure_dir(dir: &std::path::Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", dir.display()))
}
