use clap::{Parser, Subcommand};
use epifilter_cli::commands::{resolve_out_dir, run_command};
use epifilter_cli::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Filtering, smoothing and parameter estimation for discrete-time
/// stochastic compartmental epidemic models.
#[derive(Parser)]
#[command(name = "epifilter", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration (a manifest from a previous run also works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for output files (default: current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate latent chains and observations.
    Simulate,
    /// Run the multinomial filter over an observation file.
    Filter,
    /// Run the filter and the backward smoother.
    Smooth,
    /// Profile-likelihood EM over a transmission/decay grid.
    FitEm,
    /// Metropolis-within-Gibbs over the approximate posterior.
    FitMcmc,
    /// Particle filter with backward sampling and derived summaries.
    Smc,
    /// Replicated filtering bias/coverage experiment.
    BiasCoverage,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Filter => "filter",
            Command::Smooth => "smooth",
            Command::FitEm => "fit-em",
            Command::FitMcmc => "fit-mcmc",
            Command::Smc => "smc",
            Command::BiasCoverage => "bias-coverage",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: could not set thread count: {e}");
        }
    }

    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("configuration error: --config <file.json> is required");
            return ExitCode::from(2);
        }
    };
    let mut config = match RunConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let out_dir = resolve_out_dir(cli.out_dir);
    match run_command(cli.command.name(), &config, &out_dir) {
        Ok(manifest) => {
            println!(
                "{}: wrote {} file(s) to {}",
                manifest.command,
                manifest.outputs.len() + 1,
                out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
