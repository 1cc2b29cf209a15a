//! Experiment runner CLI.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use edgesim::config::{Experiment, Overrides};
use edgesim::metrics::{self, SweepAxis, SweepRow};
use edgesim::workload;

#[derive(Parser)]
#[command(
    name = "edgesim",
    version,
    about = "Deterministic simulator for deadline-aware task offloading at the edge"
)]
struct Cli {
    /// Experiment configuration file (TOML).
    config: Option<PathBuf>,

    /// Apply a named workload preset (see --list-presets).
    #[arg(long)]
    preset: Option<String>,

    /// Scheduling policy: aor, aoe, eods, or dds.
    #[arg(long)]
    policy: Option<String>,

    /// Seed for the transport loss / jitter generators.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for results files.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also dump the event trace (one line per dispatched event).
    #[arg(long)]
    trace: bool,

    /// List the built-in workload presets and exit.
    #[arg(long)]
    list_presets: bool,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.list_presets {
        print!("{}", workload::preset_listing());
        return Ok(());
    }
    let config_path = cli
        .config
        .context("a configuration file is required (or use --list-presets)")?;
    let overrides = Overrides {
        preset: cli.preset,
        policy: cli.policy,
        seed: cli.seed,
        out_dir: cli.out,
    };
    let experiment = Experiment::load_with_overrides(&config_path, &overrides)?;
    for warning in &experiment.warnings {
        eprintln!("warning: {warning}");
    }
    fs::create_dir_all(&experiment.out_dir)
        .with_context(|| format!("creating output directory {}", experiment.out_dir.display()))?;

    if experiment.sweep.is_some() {
        if cli.trace {
            eprintln!("note: --trace applies to single runs; sweep runs are not traced");
        }
        run_sweep(&experiment)
    } else {
        run_single(&experiment, cli.trace)
    }
}

fn run_single(experiment: &Experiment, trace: bool) -> anyhow::Result<()> {
    let (result, trace_lines) = experiment.run_single(trace)?;

    let results_path = experiment.out_dir.join("results.csv");
    let rows = vec![SweepRow::from_result(
        SweepAxis::DeadlineMs,
        experiment.workload.deadline_ms,
        &result,
    )];
    let mut buf = Vec::new();
    metrics::write_sweep_csv(&mut buf, &rows)?;
    fs::write(&results_path, buf)?;

    if experiment.write_tasks {
        let mut buf = Vec::new();
        metrics::write_tasks_csv(&mut buf, &result)?;
        fs::write(experiment.out_dir.join("tasks.csv"), buf)?;
    }
    if let Some(lines) = trace_lines {
        fs::write(
            experiment.out_dir.join("trace.txt"),
            lines.join("\n") + "\n",
        )?;
    }

    println!(
        "policy={} deadline_ms={} images={}: met {}, lost {}, mean latency {}",
        result.policy,
        experiment.workload.deadline_ms,
        result.records.len(),
        result.met_count,
        result.loss_count,
        result
            .mean_latency_ms()
            .map(|v| format!("{v:.1} ms"))
            .unwrap_or_else(|| "n/a".to_string()),
    );
    for (name, count) in &result.executed_per_device {
        println!("  {name}: {count} tasks");
    }
    println!(
        "virtual clock {:.1} ms, simulated in {:?}",
        result.final_clock.as_ms(),
        result.sim_wall
    );
    println!("wrote {}", results_path.display());
    Ok(())
}

fn run_sweep(experiment: &Experiment) -> anyhow::Result<()> {
    let mut rows: Vec<SweepRow> = Vec::new();
    let sweep_result = experiment.run_sweep(&mut rows);

    let path = match &sweep_result {
        Ok(()) => experiment.out_dir.join("results.csv"),
        // A failed run aborts the sweep; keep what finished, clearly flagged.
        Err(_) => experiment.out_dir.join("results.partial.csv"),
    };
    let mut buf = Vec::new();
    metrics::write_sweep_csv(&mut buf, &rows)?;
    fs::write(&path, buf)?;

    match sweep_result {
        Ok(()) => {
            println!("{} sweep rows -> {}", rows.len(), path.display());
            Ok(())
        }
        Err(err) => {
            eprintln!(
                "sweep aborted after {} completed runs; partial output in {}",
                rows.len(),
                path.display()
            );
            Err(err.into())
        }
    }
}
