use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

mod commands;
mod config;
mod error;
mod finite;

use commands::Context;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "adiaprep", version, about = "Sequential adiabatic preparation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir` in the config.
    #[arg(long, global = true, env = "ADIAPREP_OUT")]
    out: Option<PathBuf>,

    /// Seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; all cores when absent.
    #[arg(long, global = true, env = "ADIAPREP_THREADS")]
    threads: Option<usize>,

    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Target state, reduced density matrix and Gibbs comparison.
    State,
    /// Adiabatic error against total runtime.
    Sweep,
    /// Cluster-expansion terms, truncation certificates and gap table.
    Cluster,
    /// Metropolis generator against its parent Hamiltonian.
    Mcmc,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::config("--config is required"))?;
    let loaded = config::load(path)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let config_hash = hex::encode(Sha256::digest(&loaded.raw));
    let seed = cli.seed.unwrap_or(loaded.config.seed);
    let out = cli.out.clone().or_else(|| loaded.config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    log::info!("config {} (sha256 {config_hash}), seed {seed}, output {}", path.display(), out.display());
    let ctx = Context { loaded, out, seed, config_hash };
    match cli.command {
        Command::State => commands::cmd_state(&ctx),
        Command::Sweep => commands::cmd_sweep(&ctx),
        Command::Cluster => commands::cmd_cluster(&ctx),
        Command::Mcmc => commands::cmd_mcmc(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
