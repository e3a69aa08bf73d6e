//! `adaloc`: run twin experiments, sweeps, oracle baselines and the fast
//! self-check suite.
//!
//! Exit status: 0 on success, 1 when the command completed but the filter
//! diverged (or a self-check failed), 2 on errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaloc::harness::{
    oracle_run, run_experiment, sweep, with_workers, write_run_outputs, write_sweep_outputs,
    ExperimentConfig, ExperimentRecord,
};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "adaloc", version, about = "DEnKF twin experiments with adaptive localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment.
    Run(ExperimentArgs),
    /// Run the Cartesian product of the config's sweep lists.
    Sweep(ExperimentArgs),
    /// Run the truth-aware oracle baseline.
    Oracle(ExperimentArgs),
    /// Run the fast numerical self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Outcome {
    Success,
    Failed,
}

fn load(args: &ExperimentArgs) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml_str(&text)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn report(record: &ExperimentRecord, out: &Path) -> Outcome {
    println!(
        "aggregate RMSE {} over {} cycles; outputs in {}",
        record.aggregate_rmse,
        record.cycles.len(),
        out.display()
    );
    match &record.divergence {
        Some(why) => {
            eprintln!("diverged: {why}");
            Outcome::Failed
        }
        None => Outcome::Success,
    }
}

fn single(args: &ExperimentArgs, oracle: bool) -> Result<Outcome, String> {
    let cfg = load(args)?;
    let record = with_workers(args.workers, || {
        if oracle {
            oracle_run(&cfg)
        } else {
            run_experiment(&cfg)
        }
    })
    .map_err(|e| e.to_string())?;
    write_run_outputs(&args.out, &cfg, &record).map_err(|e| e.to_string())?;
    Ok(report(&record, &args.out))
}

fn sweep_command(args: &ExperimentArgs) -> Result<Outcome, String> {
    let cfg = load(args)?;
    let outcome = sweep(&cfg, args.workers).map_err(|e| e.to_string())?;
    write_sweep_outputs(&args.out, &cfg, &outcome).map_err(|e| e.to_string())?;
    let diverged = outcome.rows.iter().filter(|r| r.diverged).count();
    println!(
        "{} runs, {diverged} diverged; outputs in {}",
        outcome.rows.len(),
        args.out.display()
    );
    for b in outcome.best_per_alpha() {
        println!(
            "alpha {}: best aggregate RMSE {} (run {})",
            b.alpha, b.aggregate_rmse, b.index
        );
    }
    Ok(if outcome.any_usable() {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}

fn check(args: &CheckArgs) -> Result<Outcome, String> {
    let results = adaloc::checks::run_all(args.seed).map_err(|e| e.to_string())?;
    for r in &results {
        println!("{r}");
    }
    Ok(if results.iter().all(|r| r.passed) {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => single(a, false),
        Command::Oracle(a) => single(a, true),
        Command::Sweep(a) => sweep_command(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
