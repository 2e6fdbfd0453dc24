use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use kh_cli::commands::{self, Fault};
use kh_cli::{ExperimentConfig, Report};

/// Numerical checks for kinetic Hölder spaces on the Galilean group.
///
/// Every verdict is a JSON report (schema kh-report/1); the exit code is 0
/// exactly when all checks pass. KH_THREADS caps the worker threads.
#[derive(Parser)]
#[command(name = "kh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat TOML file with the same keys as the flags (theta, alpha, dim, func,
    /// seed, out, matrix_file, s, p, samples, h); flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: ExperimentConfig,
}

#[derive(Subcommand)]
enum Command {
    /// Group laws on seeded samples (criterion 1).
    /// Defaults: theta 2, dim 1, samples 10000, tolerance 1e-10 relative.
    VerifyGroup {
        /// Harness self-test: run with a defective group law
        #[arg(long, value_enum, default_value_t = Fault::None)]
        inject_fault: Fault,
    },
    /// Taylor term lists against hand-derived reference lists (criterion 2).
    /// With --theta and --alpha the enumerated terms are attached (dim default 1).
    Terms,
    /// Monomials below alpha are reproduced on the unit ball (criterion 3).
    /// Defaults: (theta, alpha) in {(1/3, 1.2), (4/3, 2.6), (2, 2.9)}, dim 1.
    TaylorExact,
    /// Log-log slope of the Taylor remainder (criterion 4).
    /// Defaults: the three (theta, alpha) cases, func sin_mix, dim 1, distances [1e-3, 1e-1].
    TaylorScaling,
    /// Slope of pure-x increments along commutator paths (criterion 5).
    /// Defaults: the three (theta, alpha) cases, dim 1.
    HolderX,
    /// Commutator-path endpoint identity (criterion 6).
    /// Defaults: theta 1, dim 2, samples 1000, tolerance 1e-12.
    Steer,
    /// Connection solver in the group of a drift matrix (criterion 6).
    /// Defaults: theta 1, dim 2, samples 100 random B, h 1e-3; --matrix-file fixes B.
    Connect,
    /// Kinetic operator evaluations as CSV (criterion 7).
    /// Defaults: s in {0.25, 0.5, 0.75} for the symbol, s 0.5 and func gauss_cos
    /// for invariance, dim 1; --p adds unjudged rows for that exponent.
    Operator,
    /// Term seminorms against the C^alpha seminorm (criterion 8).
    /// Defaults: theta 4/3, alpha 2.6, dim 1, every corpus function with exact derivatives.
    Seminorm,
    /// Flow-exit radii for nested cubes (informational).
    /// Defaults: dim 1, homogeneous flows; --matrix-file uses the drift.
    Delta,
    /// Criteria 1-8 run twice, on one and on KH_THREADS workers; the byte
    /// comparison of the two runs is criterion 9. --out names a directory.
    Suite,
}

fn threads() -> Result<Option<usize>> {
    match std::env::var("KH_THREADS") {
        Ok(v) => Ok(Some(v.parse().with_context(|| format!("KH_THREADS must be a positive integer, got `{v}`"))?)),
        Err(_) => Ok(None),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(report: &Report, out: Option<&Path>) -> Result<()> {
    match (out, &report.table) {
        (Some(path), Some(table)) => {
            write(path, table)?;
            write(&path.with_extension("json"), &report.to_json())?;
        }
        (Some(path), None) => write(path, &report.to_json())?,
        (None, Some(table)) => print!("{table}"),
        (None, None) => print!("{}", report.to_json()),
    }
    eprintln!("{}", report.summary());
    Ok(())
}

fn run_suite(cfg: &ExperimentConfig, workers: usize) -> Result<bool> {
    let (verdict, reports) = commands::determinism(cfg.seed(), workers)?;
    let all: Vec<&Report> = reports.iter().chain(std::iter::once(&verdict)).collect();
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for (i, r) in all.iter().enumerate() {
                let stem = format!("{:02}-{}", i + 1, r.command);
                write(&dir.join(format!("{stem}.json")), &r.to_json())?;
                if let Some(t) = &r.table {
                    write(&dir.join(format!("{stem}.csv")), t)?;
                }
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&all)?),
    }
    for r in &all {
        eprintln!("{}", r.summary());
    }
    Ok(all.iter().all(|r| r.pass))
}

fn run(cli: Cli) -> Result<bool> {
    let workers = threads()?;
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &cli.config {
        Some(path) => cli.settings.over(ExperimentConfig::load(path)?),
        None => cli.settings,
    };
    let report = match cli.command {
        Command::VerifyGroup { inject_fault } => commands::verify_group(&cfg, inject_fault)?,
        Command::Terms => commands::terms(&cfg)?,
        Command::TaylorExact => commands::taylor_exact(&cfg)?,
        Command::TaylorScaling => commands::taylor_scaling(&cfg)?,
        Command::HolderX => commands::holder_x(&cfg)?,
        Command::Steer => commands::steer(&cfg)?,
        Command::Connect => commands::connect_trials(&cfg)?,
        Command::Operator => commands::operator(&cfg)?,
        Command::Seminorm => commands::seminorm(&cfg)?,
        Command::Delta => commands::delta(&cfg)?,
        Command::Suite => return run_suite(&cfg, workers.unwrap_or_else(rayon::current_num_threads)),
    };
    emit(&report, cfg.out.as_deref())?;
    Ok(report.pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
