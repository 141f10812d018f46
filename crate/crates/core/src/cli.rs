//! Command-line front end: `run`, `sweep` and `validate-trace`.
//!
//! Exit codes: 0 on success, 1 for usage, configuration, trace or I/O
//! errors, 2 when a run trips an invariant.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::engine::{self, Scenario, SimError};
use crate::metrics::{self, SimulationReport};
use crate::mobility::{load_trace, TraceSummary};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_INVARIANT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "vvaas", version, about = "Virtual vehicle migration simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write report.csv and events.jsonl.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides `[run].seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario over several vehicle counts and seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Parameter values, e.g. `vehicles=4,8,16,32`.
        #[arg(long)]
        param: String,
        /// Seeds per value: base-seed .. base-seed + seeds.
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a mobility trace and print a summary.
    ValidateTrace { path: PathBuf },
}

/// Parses `vehicles=4,8,16`.
pub fn parse_sweep_param(spec: &str) -> Result<Vec<u32>, String> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=V1,V2,..., got {spec:?}"))?;
    if name.trim() != "vehicles" {
        return Err(format!(
            "unknown sweep parameter {:?} (only \"vehicles\" is supported)",
            name.trim()
        ));
    }
    let values = values
        .split(',')
        .map(|v| match v.trim().parse::<u32>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("sweep value {v:?} is not a positive integer")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("no sweep values given".into());
    }
    Ok(values)
}

fn error_code(e: &SimError) -> u8 {
    match e {
        SimError::InvariantViolation { .. } => EXIT_INVARIANT,
        _ => EXIT_ERROR,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out_dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let loaded = Scenario::load(scenario).and_then(|s| s.resolve_seed(seed).map(|seed| (s, seed)));
    let (scenario, seed) = match loaded {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let output = match engine::run(&scenario, seed) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return error_code(&e);
        }
    };
    let written = ensure_dir(out_dir).and_then(|_| {
        metrics::emit_csv(std::slice::from_ref(&output.report), &out_dir.join("report.csv"))
            .and_then(|_| metrics::write_atomic(&out_dir.join("events.jsonl"), output.events_jsonl.as_bytes()))
            .map_err(|e| e.to_string())
    });
    if let Err(e) = written {
        let _ = writeln!(err, "error: {e}");
        return EXIT_ERROR;
    }
    let r = &output.report;
    let _ = writeln!(
        out,
        "seed {}: {} migrations ({} to vehicle, {} to RSU, {} failed), {:.3}% to vehicle",
        r.seed, r.migrations_total, r.to_vehicle, r.to_rsu, r.failed, r.pct_to_vehicle
    );
    EXIT_OK
}

/// Runs every `(count, seed)` combination. The first failure in sorted
/// order wins so the diagnostic does not depend on thread timing.
pub fn sweep_reports(
    base: &Scenario,
    counts: &[u32],
    seeds: std::ops::Range<u64>,
    jobs: Option<usize>,
) -> Result<Vec<SimulationReport>, SimError> {
    let mut combos = Vec::new();
    for &n in counts {
        let scenario = base.with_vehicle_count(n)?;
        for seed in seeds.clone() {
            combos.push((scenario.clone(), seed));
        }
    }
    let work = || {
        combos
            .par_iter()
            .map(|(s, seed)| engine::run(s, *seed).map(|o| o.report))
            .collect::<Vec<_>>()
    };
    let results = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map(|pool| pool.install(work))
            .unwrap_or_else(|_| work()),
        None => work(),
    };
    results.into_iter().collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    scenario: &Path,
    param: &str,
    seeds: u64,
    base_seed: u64,
    jobs: Option<usize>,
    out_dir: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> u8 {
    if seeds == 0 {
        let _ = writeln!(err, "error: --seeds must be at least 1");
        return EXIT_ERROR;
    }
    let counts = match parse_sweep_param(param) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let base = match Scenario::load(scenario) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let Some(end) = base_seed.checked_add(seeds) else {
        let _ = writeln!(err, "error: seed range overflows");
        return EXIT_ERROR;
    };
    let reports = match sweep_reports(&base, &counts, base_seed..end, jobs) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return error_code(&e);
        }
    };
    let summary = metrics::summarize_by_density(&reports);
    let written = ensure_dir(out_dir).and_then(|_| {
        metrics::emit_csv(&reports, &out_dir.join("sweep.csv"))
            .and_then(|_| {
                metrics::write_atomic(
                    &out_dir.join("sweep_summary.csv"),
                    metrics::summary_to_csv(&summary).as_bytes(),
                )
            })
            .map_err(|e| e.to_string())
    });
    if let Err(e) = written {
        let _ = writeln!(err, "error: {e}");
        return EXIT_ERROR;
    }
    let _ = write!(out, "{}", metrics::summary_to_csv(&summary));
    EXIT_OK
}

fn cmd_validate_trace(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    match load_trace(path) {
        Ok(records) => {
            let s = TraceSummary::of(&records);
            let plural = |n: usize, word: &str| format!("{n} {word}{}", if n == 1 { "" } else { "s" });
            let _ = writeln!(
                out,
                "{}, {}, t = {} .. {} s",
                plural(s.rows, "row"),
                plural(s.vehicles, "vehicle"),
                s.t_min,
                s.t_max
            );
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            EXIT_ERROR
        }
    }
}

/// Entry point shared by the binary and the tests.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_ERROR
                }
            };
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out: dir,
        } => cmd_run(&scenario, seed, &dir, out, err),
        Command::Sweep {
            scenario,
            param,
            seeds,
            out: dir,
            base_seed,
            jobs,
        } => cmd_sweep(&scenario, &param, seeds, base_seed, jobs, &dir, out, err),
        Command::ValidateTrace { path } => cmd_validate_trace(&path, out, err),
    }
}
