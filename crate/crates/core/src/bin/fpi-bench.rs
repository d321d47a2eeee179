use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fpi_core::bench::{run, Bench, Command, ExperimentConfig};

/// Fixed-point inversion experiments on exact Gaussian-mixture denoisers.
#[derive(Parser, Debug)]
#[command(name = "fpi-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (JSON).
    #[arg(long, global = true, default_value = "configs/default.json")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `rng_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plots: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Seed recovery and regeneration error per method and guidance scale.
    Reconstruct,
    /// Reconstruction quality against the iteration budget.
    SweepIters,
    /// Encoding, raw-inversion and adjusted-inversion distances.
    Consistency,
    /// Slerp paths and centroids between inverted seeds.
    Interpolate,
    /// Every experiment above.
    All,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_TRIAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Reconstruct => Command::Reconstruct,
        Cmd::SweepIters => Command::SweepIters,
        Cmd::Consistency => Command::Consistency,
        Cmd::Interpolate => Command::Interpolate,
        Cmd::All => Command::All,
    };

    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    let out = cli
        .out
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let bench = match Bench::new(cfg) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    log::info!("config hash {}", bench.config_hash);

    match run(&bench, command, &out, cli.plots) {
        Ok(outcome) => {
            for f in &outcome.files {
                log::info!("wrote {}", f.display());
            }
            let failed = outcome.failed_trials();
            if failed > 0 {
                eprintln!("{failed} trial(s) failed");
                return ExitCode::from(EXIT_TRIAL);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
