//! Experiment CLI: trace runs, phase-transition grids, sensitivity grids,
//! and the verification suite. JSON in, CSV out; outputs are deterministic
//! functions of the config regardless of thread count.

use clap::{Parser, Subcommand};
use lmm::experiments::{
    cmd_run, cmd_sensitivity, cmd_transition, sensitivity_to_csv, transition_to_csv,
    ExperimentConfig,
};
use lmm::verify::{checks_to_csv, run_checks};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lmm", about = "Preconditioned subgradient solver experiment harness")]
struct Cli {
    /// Worker threads for grid commands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the seed list from the config with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run each configured solver on each seed; one trace CSV per pair.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config's output_dir, or ".").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Success-rate grid over (measurements, corruption fraction).
    Transition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterations-to-tolerance grid over (q, gamma).
    Sensitivity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the structural check registry; nonzero exit if any check fails.
    Verify {
        /// `*` glob over check names.
        #[arg(long)]
        filter: Option<String>,
    },
}

fn load(config: &PathBuf, seed_override: Option<u64>) -> lmm::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    #[cfg(not(feature = "parallel"))]
    if let Some(n) = cli.threads {
        if n > 1 {
            eprintln!("note: built without the \"parallel\" feature; running single-threaded");
        }
    }

    let run = || -> lmm::Result<ExitCode> {
        match cli.command {
            Command::Run { ref config, ref out } => {
                let cfg = load(config, cli.seed)?;
                let dir = out_dir(out.clone(), &cfg);
                let paths = cmd_run(&cfg, &dir)?;
                for p in paths {
                    println!("{}", p.display());
                }
                Ok(ExitCode::SUCCESS)
            }
            Command::Transition { ref config, ref out } => {
                let cfg = load(config, cli.seed)?;
                let dir = out_dir(out.clone(), &cfg);
                std::fs::create_dir_all(&dir)?;
                let cells = cmd_transition(&cfg)?;
                let path = dir.join("transition.csv");
                std::fs::write(&path, transition_to_csv(&cells))?;
                println!("{}", path.display());
                Ok(ExitCode::SUCCESS)
            }
            Command::Sensitivity { ref config, ref out } => {
                let cfg = load(config, cli.seed)?;
                let dir = out_dir(out.clone(), &cfg);
                std::fs::create_dir_all(&dir)?;
                let cells = cmd_sensitivity(&cfg)?;
                let path = dir.join("sensitivity.csv");
                std::fs::write(&path, sensitivity_to_csv(&cells))?;
                println!("{}", path.display());
                Ok(ExitCode::SUCCESS)
            }
            Command::Verify { ref filter } => {
                let results = run_checks(filter.as_deref());
                print!("{}", checks_to_csv(&results));
                if results.iter().all(|r| r.passed) {
                    Ok(ExitCode::SUCCESS)
                } else {
                    Ok(ExitCode::FAILURE)
                }
            }
        }
    };
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
