//! Artifact formats and overwrite discipline.
//!
//! Every artifact is written atomically (temp file, then rename), so a
//! file that exists and parses was written in full; resume logic leans
//! on that. All CSVs use UTF-8, `.` decimals, LF line endings, and floats
//! formatted through `Display`, which round-trips f64 exactly.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use fairband_core::{SimulationResult, TracePhase};

use crate::aggregate::{AggregateReport, NSummary};
use crate::HarnessError;

pub const RUN_HEADER: &str = "slot,cum_regret,epoch,phase";
pub const AGG_HEADER: &str = "T,median,q01,q99";
pub const PLOT_HEADER: &str = "figure,n,x,y";

/// One checkpoint of one run, as stored in the per-run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub slot: u64,
    pub cum_regret: f64,
    pub epoch: u32,
    pub phase: TracePhase,
}

pub fn rows_from_result(result: &SimulationResult) -> Vec<RunRow> {
    result
        .trace
        .checkpoints()
        .iter()
        .map(|cp| RunRow {
            slot: cp.slot,
            cum_regret: cp.cum_regret,
            epoch: cp.epoch,
            phase: cp.phase,
        })
        .collect()
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}

pub fn report_path(out_dir: &Path) -> PathBuf {
    out_dir.join("report.json")
}

pub fn plot_path(out_dir: &Path) -> PathBuf {
    out_dir.join("plot.csv")
}

pub fn aggregate_path(out_dir: &Path, n: usize) -> PathBuf {
    out_dir.join(format!("aggregate_n{n}.csv"))
}

pub fn run_path(out_dir: &Path, n: usize, run_index: usize) -> PathBuf {
    out_dir
        .join("runs")
        .join(format!("n{n}"))
        .join(format!("run{run_index:05}.csv"))
}

/// Write `bytes` to `path` unless an identical file already sits there.
///
/// Returns whether anything was written. An existing file with different
/// contents is only replaced under `force`; matching bytes are a no-op,
/// so re-emitting an experiment never needs force.
pub fn write_if_changed(path: &Path, bytes: &[u8], force: bool) -> Result<bool, HarnessError> {
    match fs::read(path) {
        Ok(existing) if existing == bytes => return Ok(false),
        Ok(_) if !force => {
            return Err(HarnessError::WouldOverwrite {
                path: path.to_path_buf(),
            })
        }
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(HarnessError::io(path, e)),
    }
    write_atomic(path, bytes)?;
    Ok(true)
}

/// Temp-file-and-rename write; `path` never holds a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn run_csv_bytes(rows: &[RunRow]) -> Vec<u8> {
    let mut out = String::with_capacity(rows.len() * 24 + RUN_HEADER.len() + 1);
    out.push_str(RUN_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.slot,
            row.cum_regret,
            row.epoch,
            row.phase.as_str()
        ));
    }
    out.into_bytes()
}

fn parse_phase(s: &str) -> Option<TracePhase> {
    match s {
        "ordering" => Some(TracePhase::Ordering),
        "exploration" => Some(TracePhase::Exploration),
        "matching" => Some(TracePhase::Matching),
        "exploitation" => Some(TracePhase::Exploitation),
        _ => None,
    }
}

/// Strict parse of a per-run CSV: exact header, four columns, strictly
/// increasing slots, at least one row.
pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let parse_err = |line: usize, message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RUN_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(1, format!("unexpected header {header:?}")));
        }
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    let mut prev_slot = 0u64;
    for (i, line) in lines {
        let lineno = i + 1;
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| parse_err(lineno, format!("missing {name} column")))
        };
        let slot: u64 = next("slot")?
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad slot: {e}")))?;
        let cum_regret: f64 = next("cum_regret")?
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad cum_regret: {e}")))?;
        let epoch: u32 = next("epoch")?
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad epoch: {e}")))?;
        let phase_field = next("phase")?;
        let phase = parse_phase(phase_field)
            .ok_or_else(|| parse_err(lineno, format!("unknown phase {phase_field:?}")))?;
        if fields.next().is_some() {
            return Err(parse_err(lineno, "too many columns".into()));
        }
        if slot <= prev_slot {
            return Err(parse_err(lineno, "slots must strictly increase".into()));
        }
        prev_slot = slot;
        rows.push(RunRow {
            slot,
            cum_regret,
            epoch,
            phase,
        });
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    Ok(rows)
}

pub fn aggregate_csv_bytes(summary: &NSummary) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(AGG_HEADER);
    out.push('\n');
    for p in &summary.grid {
        out.push_str(&format!("{},{},{},{}\n", p.t, p.median, p.q01, p.q99));
    }
    out.into_bytes()
}

/// Long-format CSV feeding the two standard figures: median regret
/// against the log horizon (one series per agent count) and final median
/// regret against the agent count.
pub fn plot_csv_bytes(report: &AggregateReport) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(PLOT_HEADER);
    out.push('\n');
    for summary in &report.per_n {
        for p in &summary.grid {
            out.push_str(&format!(
                "regret_vs_logt,{},{},{}\n",
                summary.n,
                (p.t as f64).log2(),
                p.median
            ));
        }
    }
    for summary in &report.per_n {
        out.push_str(&format!(
            "regret_vs_n,{},{},{}\n",
            summary.n, summary.n, summary.final_regret_median
        ));
    }
    out.into_bytes()
}

pub fn report_json_bytes(report: &AggregateReport) -> Result<Vec<u8>, HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}
