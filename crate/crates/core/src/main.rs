use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use stale_lab::gate::{StalenessGate, TauCut};
use stale_lab::harness::{self, verify, SweepSpec};

#[derive(Parser)]
#[command(name = "stale-lab", version, about = "Delayed outer-optimizer simulation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config and write `<hash>_s<seed>.json` into the output dir.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run every missing cell of a sweep, then write summary.csv and summary.txt.
    Sweep {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, env = "STALE_LAB_JOBS")]
        jobs: Option<usize>,
    },
    /// Print gamma, exp(-alpha tau), sigma and tau*sigma for integer tau.
    GateTable {
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        /// Cutoff in rounds, or `inf`.
        #[arg(long, default_value = "32")]
        tau_cut: TauCut,
        #[arg(long, default_value_t = 40)]
        tau_max: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the self-check suite; exit status 1 if anything fails.
    Verify,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed_override,
        } => {
            let (path, result) = harness::cli_run(&config, &out, seed_override)?;
            println!(
                "{} {} final_loss={:.6} diverged={} wall={:.2}s",
                path.display(),
                result.schedule,
                result.final_loss,
                result.diverged,
                result.wall_time_s
            );
        }
        Command::Sweep { sweep, out, jobs } => {
            let spec = SweepSpec::load(&sweep)?;
            let report = harness::run_sweep(&spec, &out, jobs)?;
            print!("{}", report.summary.to_table());
            println!(
                "{} cells: {} ran, {} already present, {} failed",
                report.cells.len(),
                report.ran(),
                report.skipped(),
                report.failures().len()
            );
            for (i, msg) in report.failures() {
                eprintln!("cell {i}: {msg}");
            }
            println!("wrote {} and {}", report.csv_path.display(), report.table_path.display());
        }
        Command::GateTable {
            alpha,
            tau_cut,
            tau_max,
            csv,
        } => {
            let gate = StalenessGate::new(alpha, tau_cut)?;
            let rows = harness::gate_table(&gate, tau_max)?;
            print!("{}", harness::gate_table_text(&rows, &gate));
            if let Some(path) = csv {
                std::fs::write(&path, harness::gate_table_csv(&rows, alpha))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Verify => {
            let outcomes = verify::run_all();
            print!("{}", verify::report(&outcomes));
            if outcomes.iter().any(|o| !o.passed()) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
