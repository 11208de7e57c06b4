use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedlab_cli::{analyze, compare, run, FileConfig, RunOptions};
use fedlab_core::StrategyKind;

/// Federated aggregation experiments with per-round norm analysis.
#[derive(Debug, Parser)]
#[command(name = "fedlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a config and write metrics CSVs plus a manifest to --out.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Client-training threads. Never changes results.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Comma-separated strategies to sweep, e.g. fedavg,fednnnn.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<StrategyKind>>,
        /// Replaces the experiment seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize final and best accuracy of the runs under a directory.
    Compare {
        dir: PathBuf,
        /// Also write every round of every run to this CSV.
        #[arg(long)]
        merged: Option<PathBuf>,
    },
    /// FedAvg's N and E with one client, IID clients and non-IID clients.
    AnalyzeNwda {
        config: PathBuf,
        /// Directory for per-round CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            strategies,
            seed,
        } => {
            let strategies = strategies.map(|list| {
                let mut unique = Vec::new();
                for k in list {
                    if !unique.contains(&k) {
                        unique.push(k);
                    }
                }
                unique
            });
            let manifest = run(
                &config,
                &out,
                &RunOptions {
                    workers,
                    strategies,
                    seed,
                },
            )?;
            for o in &manifest.outputs {
                println!(
                    "{}: {} rounds -> {}",
                    o.strategy,
                    o.rounds_completed,
                    out.join(&o.metrics).display()
                );
            }
        }
        Command::Compare { dir, merged } => {
            let runs = compare::collect(&dir)?;
            print!("{}", compare::render_table(&runs));
            if let Some(path) = merged {
                compare::write_merged(&runs, &path)?;
            }
        }
        Command::AnalyzeNwda {
            config,
            out,
            workers,
        } => {
            let cfg = FileConfig::load(&config)?;
            let series = analyze::analyze(&cfg, workers.max(1))?;
            print!("{}", analyze::render_summary(&series));
            if let Some(dir) = out {
                analyze::write_series(&series, &dir)?;
            }
        }
    }
    Ok(())
}
