//! The sweep driver: one simulation per (agent count, run index).

use std::fs;
use std::io;
use std::path::Path;

use fairband_core::run_simulation;
use rayon::prelude::*;

use crate::aggregate::{aggregate_runs, AggregateReport};
use crate::emit::{
    self, aggregate_csv_bytes, plot_csv_bytes, read_run_csv, report_json_bytes, rows_from_result,
    run_csv_bytes, run_path, write_atomic, write_if_changed, RunRow,
};
use crate::spec::{ExperimentSpec, Manifest};
use crate::HarnessError;

/// One run that produced no usable artifact. The sweep keeps going and
/// reports these at the end.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub n: usize,
    pub run_index: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: AggregateReport,
    pub failures: Vec<RunFailure>,
}

/// Run every (agent count, run index) cell of `spec`, then aggregate.
///
/// Resumable: a cell whose CSV already exists and parses is reused as-is,
/// so re-running a finished sweep simulates nothing and rewrites nothing.
/// A directory holding a different experiment's manifest is refused
/// unless `force`, which wipes it first. Individual run failures are
/// collected, not fatal; an agent count with no completed runs at all is.
pub fn run_monte_carlo(
    spec: &ExperimentSpec,
    force: bool,
    workers: Option<usize>,
) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    let out_dir = spec.out_dir.clone();
    prepare_dir(spec, &out_dir, force)?;

    let cells: Vec<(usize, usize)> = spec
        .agent_counts()
        .into_iter()
        .flat_map(|n| (0..spec.n_runs).map(move |idx| (n, idx)))
        .collect();
    let results = match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
            pool.install(|| run_cells(spec, &out_dir, &cells))
        }
        None => run_cells(spec, &out_dir, &cells),
    };

    let mut failures = Vec::new();
    let mut report = AggregateReport { per_n: Vec::new() };
    for n in spec.agent_counts() {
        let mut completed: Vec<(usize, Vec<RunRow>)> = Vec::new();
        let mut failed_indices = Vec::new();
        for ((cell_n, idx), outcome) in cells.iter().zip(&results) {
            if *cell_n != n {
                continue;
            }
            match outcome {
                Ok(rows) => completed.push((*idx, rows.clone())),
                Err(message) => {
                    failed_indices.push(*idx);
                    failures.push(RunFailure {
                        n,
                        run_index: *idx,
                        message: message.clone(),
                    });
                }
            }
        }
        report
            .per_n
            .push(aggregate_runs(n, &completed, &failed_indices)?);
    }

    for summary in &report.per_n {
        write_if_changed(
            &emit::aggregate_path(&out_dir, summary.n),
            &aggregate_csv_bytes(summary),
            force,
        )?;
    }
    write_if_changed(
        &emit::report_path(&out_dir),
        &report_json_bytes(&report)?,
        force,
    )?;
    write_if_changed(&emit::plot_path(&out_dir), &plot_csv_bytes(&report), force)?;

    Ok(SweepOutcome { report, failures })
}

/// Recompute aggregates from the per-run CSVs already under `out_dir`,
/// without simulating anything. Missing or unreadable runs count as
/// failed.
pub fn reaggregate(
    spec: &ExperimentSpec,
    out_dir: &Path,
    force: bool,
) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    let mut failures = Vec::new();
    let mut report = AggregateReport { per_n: Vec::new() };
    for n in spec.agent_counts() {
        let mut completed = Vec::new();
        let mut failed_indices = Vec::new();
        for idx in 0..spec.n_runs {
            match read_run_csv(&run_path(out_dir, n, idx)) {
                Ok(rows) => completed.push((idx, rows)),
                Err(e) => {
                    failed_indices.push(idx);
                    failures.push(RunFailure {
                        n,
                        run_index: idx,
                        message: e.to_string(),
                    });
                }
            }
        }
        report
            .per_n
            .push(aggregate_runs(n, &completed, &failed_indices)?);
    }
    for summary in &report.per_n {
        write_if_changed(
            &emit::aggregate_path(out_dir, summary.n),
            &aggregate_csv_bytes(summary),
            force,
        )?;
    }
    write_if_changed(
        &emit::report_path(out_dir),
        &report_json_bytes(&report)?,
        force,
    )?;
    write_if_changed(&emit::plot_path(out_dir), &plot_csv_bytes(&report), force)?;
    Ok(SweepOutcome { report, failures })
}

/// Create the output directory and pin the manifest before any run
/// starts. A manifest for the same experiment means resume; a different
/// one is refused, or wiped with everything else under `force`.
fn prepare_dir(spec: &ExperimentSpec, out_dir: &Path, force: bool) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let manifest_path = emit::manifest_path(out_dir);
    match Manifest::load(&manifest_path) {
        Ok(existing) if existing.spec.same_experiment(spec) => return Ok(()),
        Ok(_) if !force => {
            return Err(HarnessError::WouldOverwrite {
                path: manifest_path,
            })
        }
        Ok(_) => {
            // stale artifacts from the other experiment would otherwise be
            // picked up by resume
            fs::remove_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
            fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
        }
        Err(HarnessError::Io { source, .. }) if source.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e),
    }
    write_atomic(&manifest_path, &Manifest::for_spec(spec).to_json()?)
}

/// Simulate (or reuse) every cell, in parallel. Per-cell errors come back
/// as strings so one bad run never poisons the rest.
fn run_cells(
    spec: &ExperimentSpec,
    out_dir: &Path,
    cells: &[(usize, usize)],
) -> Vec<Result<Vec<RunRow>, String>> {
    cells
        .par_iter()
        .map(|&(n, idx)| run_cell(spec, out_dir, n, idx).map_err(|e| e.to_string()))
        .collect()
}

fn run_cell(
    spec: &ExperimentSpec,
    out_dir: &Path,
    n: usize,
    idx: usize,
) -> Result<Vec<RunRow>, HarnessError> {
    let path = run_path(out_dir, n, idx);
    if path.exists() {
        // an intact artifact is the resume point; anything unreadable is
        // rebuilt below
        if let Ok(rows) = read_run_csv(&path) {
            return Ok(rows);
        }
    }
    let config = spec.config_for(n, idx)?;
    let result = run_simulation(&config)?;
    let rows = rows_from_result(&result);
    write_atomic(&path, &run_csv_bytes(&rows))?;
    Ok(rows)
}
