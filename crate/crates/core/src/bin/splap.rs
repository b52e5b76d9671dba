use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splap_core::config::ExperimentConfig;
use splap_core::experiment::{replot, run_experiment};

#[derive(Parser)]
#[command(name = "splap", version, about = "Monte-Carlo convergence study for stochastic p-Laplace finite elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file, then print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render the figures from a `results.csv`.
    Plot {
        #[arg(long)]
        csv: PathBuf,
    },
}

fn load(path: &PathBuf) -> splap_core::Result<ExperimentConfig> {
    ExperimentConfig::parse(File::open(path)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => load(&config).and_then(|mut cfg| {
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let report = run_experiment(&cfg, workers)?;
            for e in &report.summary.exponents {
                match &e.estimate {
                    Some(r) => match &r.correction {
                        Some(c) => println!(
                            "p = {}: ã = {:.3} ± {:.3}, a = {:.3}, α = {:.3}",
                            e.p, r.a_biased, r.slope_std, c.a, c.alpha
                        ),
                        None => println!(
                            "p = {}: ã = {:.3} ± {:.3}, no bias correction ({})",
                            e.p,
                            r.a_biased,
                            r.slope_std,
                            r.correction_error.as_deref().unwrap_or("")
                        ),
                    },
                    None => println!("p = {}: no rate ({})", e.p, e.estimate_error.as_deref().unwrap_or("")),
                }
            }
            println!("results in {}", report.output_dir.display());
            let failed = report.summary.failed_cells();
            if failed > 0 {
                eprintln!("{failed} replicate cells failed; see run.log");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::Validate { config } => load(&config).map(|cfg| {
            print!("{}", cfg.echo());
            ExitCode::SUCCESS
        }),
        Command::Plot { csv } => replot(&csv).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
