//! `oseen`: batch driver for the vortex operator analyses.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use serde_json::json;

use commands::{resolution_report, run, Command};
use config::RunConfig;
use output::{to_json_bytes, write_atomic, Manifest, Timing};

#[derive(Debug, Parser)]
#[command(name = "oseen", version, about = "Spectral, semigroup and nonlinear analyses of the Oseen vortex")]
struct Cli {
    /// Analysis to run.
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides `workers`).
    #[arg(long)]
    workers: Option<usize>,
    /// Corpus seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Repeat the run on the doubled radial grid and report the changes.
    #[arg(long)]
    resolution_check: bool,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Check(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => return report(None, Failure::Config(e)),
    };
    let out = PathBuf::from(&cfg.out);
    match execute(&cli, &cfg, &out) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => report(Some(&out), Failure::Check(msg)),
        Err(e) => report(Some(&out), Failure::Runtime(e)),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.subcommand = Some(cli.command.name().to_string());
    cfg.validate()?;
    Ok(cfg)
}

/// Returns the failure message of a checked property, if any.
fn execute(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<Option<String>> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .context("starting the worker pool")?;
    oseen::linalg::pin_sequential();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stale = out.join("error.json");
    if stale.exists() {
        std::fs::remove_file(&stale)?;
    }

    let start = Instant::now();
    let outcome = run(cli.command, cfg)?;
    let refinement = if cli.resolution_check { Some(resolution_report(cli.command, cfg, &outcome)?) } else { None };
    let grid_report = json!({
        "n_points": cfg.grid.n_points,
        "r_max": cfg.grid.r_max,
        "nonlinear_r_max": cfg.grid.nonlinear_r_max(),
        "map_kind": cfg.grid.map_kind,
        "resolution_check": refinement,
    });

    let mut artifacts = Vec::new();
    for (name, table) in &outcome.tables {
        for (ext, body) in [("csv", table.to_csv()), ("dat", table.to_dat())] {
            let file = format!("{name}.{ext}");
            write_atomic(&out.join(&file), body.as_bytes())?;
            artifacts.push(file);
        }
    }
    for (file, body) in &outcome.files {
        write_atomic(&out.join(file), body.as_bytes())?;
        artifacts.push(file.clone());
    }
    let summary = json!({
        "subcommand": cli.command.name(),
        "passed": outcome.failure.is_none(),
        "summary": outcome.summary,
        "grid_report": grid_report,
    });
    write_atomic(&out.join("summary.json"), &to_json_bytes(&summary)?)?;
    artifacts.push("summary.json".into());
    let timing = Timing { wall_seconds: start.elapsed().as_secs_f64(), workers: cfg.workers };
    let manifest = Manifest::new(cli.command.name(), cfg, grid_report, artifacts, timing);
    write_atomic(&out.join("manifest.json"), &to_json_bytes(&manifest)?)?;
    Ok(outcome.failure)
}

/// Print the machine-readable error, also saving it when an output
/// directory is known, and choose the exit status.
fn report(out: Option<&Path>, failure: Failure) -> ExitCode {
    let (kind, message, chain, code) = match &failure {
        Failure::Config(e) => ("config", e.to_string(), chain_of(e), 2),
        Failure::Runtime(e) => ("runtime", e.to_string(), chain_of(e), 1),
        Failure::Check(m) => ("check_failed", m.clone(), Vec::new(), 1),
    };
    let body = json!({ "status": "error", "kind": kind, "message": message, "causes": chain, "exit_code": code });
    let bytes = to_json_bytes(&body).unwrap_or_else(|_| b"{\"status\":\"error\"}\n".to_vec());
    eprint!("{}", String::from_utf8_lossy(&bytes));
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = write_atomic(&dir.join("error.json"), &bytes);
        }
    }
    ExitCode::from(code)
}

fn chain_of(e: &anyhow::Error) -> Vec<String> {
    e.chain().skip(1).map(|c| c.to_string()).collect()
}
