mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use run::{output_dir, Pipeline, RunError, Runner};

/// Gap-stability experiments for frustration-free chains.
#[derive(Parser, Debug)]
#[command(name = "ffgap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `outputs.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for independent experiment cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Replaces the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Exit with status 1 if any acceptance check fails.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Frustration-freeness and the unperturbed gap.
    Validate,
    /// LTQO witness profiles.
    Ltqo,
    /// Spectral flow and decomposition diagnostics.
    Flow,
    /// Stability constants ledger and the form-bound check.
    Bounds,
    /// Ground-state gap along the ε grid.
    Gapsweep,
    /// Gap between two spectral clusters along the ε grid.
    Highergaps,
    /// Lower-cluster diameter against the edge cutoff D.
    Sp0scan,
    /// Every pipeline in order.
    All,
}

impl Command {
    fn pipelines(self) -> Vec<Pipeline> {
        match self {
            Command::Validate => vec![Pipeline::Validate],
            Command::Ltqo => vec![Pipeline::Ltqo],
            Command::Flow => vec![Pipeline::Flow],
            Command::Bounds => vec![Pipeline::Bounds],
            Command::Gapsweep => vec![Pipeline::Gapsweep],
            Command::Highergaps => vec![Pipeline::Highergaps],
            Command::Sp0scan => vec![Pipeline::Sp0scan],
            Command::All => Pipeline::ALL.to_vec(),
        }
    }
}

const CONFIG_ERROR: u8 = 2;
const CHECK_FAILURE: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(CONFIG_ERROR);
    };
    let mut cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error in {}: {e}", path.display());
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(CONFIG_ERROR);
        }
        // Only fails if a global pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let pipelines = cli.command.pipelines();
    let out = output_dir(&cfg, cli.out.as_deref());
    let result = Runner::new(&cfg, out, &pipelines).and_then(|mut r| r.run(&pipelines).map(|()| r));
    match result {
        Ok(runner) => {
            for c in &runner.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("summary: {}", runner.summary_path().display());
            if cli.check && !runner.passed() {
                ExitCode::from(CHECK_FAILURE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(RunError::Config(e)) => {
            eprintln!("config error in {}: {e}", path.display());
            ExitCode::from(CONFIG_ERROR)
        }
        Err(RunError::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(CHECK_FAILURE)
        }
    }
}
