//! Quantile curves over completed runs and the log-horizon regression.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::emit::RunRow;
use crate::HarnessError;

/// Least-squares line through (ln T, y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit `y = slope * ln(T) + intercept` by ordinary least squares.
///
/// Wants at least eight points with strictly increasing `T`; fewer would
/// let two phases of a single epoch masquerade as a trend. A constant
/// series is reported as a perfect slope-zero fit. No thresholding
/// happens here; callers judge `r_squared` themselves.
pub fn fit_log_regret(points: &[(u64, f64)]) -> Result<FitResult, HarnessError> {
    if points.len() < 8 {
        return Err(HarnessError::TooFewPoints(points.len()));
    }
    let mut prev = 0u64;
    for &(t, _) in points {
        if t <= prev {
            return Err(HarnessError::UnorderedPoints);
        }
        prev = t;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(t, _)| (t as f64).ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / n;
    let y_bar = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let mut s_xx = 0.0;
    let mut s_xy = 0.0;
    for (x, &(_, y)) in xs.iter().zip(points) {
        s_xx += (x - x_bar) * (x - x_bar);
        s_xy += (x - x_bar) * (y - y_bar);
    }
    let slope = s_xy / s_xx;
    let intercept = y_bar - slope * x_bar;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, &(_, y)) in xs.iter().zip(points) {
        let fitted = slope * x + intercept;
        ss_res += (y - fitted) * (y - fitted);
        ss_tot += (y - y_bar) * (y - y_bar);
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
    })
}

/// Nearest-rank quantile of an unsorted sample. `q` in (0, 1].
fn quantile_f64(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median_u64(values: &[u64]) -> u64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = (0.5 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Regret quantiles at one slot count shared by every completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub t: u64,
    pub median: f64,
    pub q01: f64,
    pub q99: f64,
}

/// Regret quantiles at one epoch boundary. Boundary slots differ across
/// runs, so the point carries the median horizon alongside the quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: u32,
    pub t_median: u64,
    pub median: f64,
    pub q01: f64,
    pub q99: f64,
}

/// Everything the sweep learned about one agent count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub completed_runs: usize,
    /// Run indices that produced no usable artifact.
    pub failed_runs: Vec<usize>,
    /// Median horizon and regret at each run's end.
    pub final_t_median: u64,
    pub final_regret_median: f64,
    /// Quantiles on the slot counts present in every completed run.
    pub grid: Vec<GridPoint>,
    /// Quantiles at epoch boundaries shared by every completed run.
    pub epoch_curve: Vec<EpochPoint>,
    /// Epoch window (inclusive) the fit was computed over, when one fit.
    pub fit_window: Option<(u32, u32)>,
    /// Regression of median regret on the log horizon over that window.
    pub fit: Option<FitResult>,
}

/// Aggregate artifact mirrored into `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_n: Vec<NSummary>,
}

/// Collapse one agent count's completed runs into quantile curves and the
/// late-window fit. Output depends only on the set of runs, not their
/// order.
pub fn aggregate_runs(
    n: usize,
    runs: &[(usize, Vec<RunRow>)],
    failed: &[usize],
) -> Result<NSummary, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::Config(format!("no completed runs for n={n}")));
    }
    for (idx, rows) in runs {
        if rows.is_empty() {
            return Err(HarnessError::Config(format!(
                "run {idx} for n={n} has no checkpoints"
            )));
        }
    }

    // Slots every run has a row for, in slot order.
    let mut slot_counts: HashMap<u64, usize> = HashMap::new();
    for (_, rows) in runs {
        for row in rows {
            *slot_counts.entry(row.slot).or_default() += 1;
        }
    }
    let mut common: Vec<u64> = slot_counts
        .iter()
        .filter(|&(_, &c)| c == runs.len())
        .map(|(&slot, _)| slot)
        .collect();
    common.sort_unstable();

    let grid = common
        .iter()
        .map(|&slot| {
            let values: Vec<f64> = runs
                .iter()
                .map(|(_, rows)| {
                    let i = rows.binary_search_by_key(&slot, |r| r.slot).unwrap();
                    rows[i].cum_regret
                })
                .collect();
            GridPoint {
                t: slot,
                median: quantile_f64(&values, 0.5),
                q01: quantile_f64(&values, 0.01),
                q99: quantile_f64(&values, 0.99),
            }
        })
        .collect();

    // Epoch curve up to the last epoch every run reached. The boundary row
    // is the last row carrying that epoch number.
    let epochs_done = runs
        .iter()
        .map(|(_, rows)| rows.iter().map(|r| r.epoch).max().unwrap())
        .min()
        .unwrap();
    let mut epoch_curve = Vec::new();
    for epoch in 1..=epochs_done {
        let mut ts = Vec::with_capacity(runs.len());
        let mut values = Vec::with_capacity(runs.len());
        for (idx, rows) in runs {
            let row = rows
                .iter()
                .rev()
                .find(|r| r.epoch == epoch)
                .ok_or_else(|| {
                    HarnessError::Config(format!("run {idx} for n={n} skips epoch {epoch}"))
                })?;
            ts.push(row.slot);
            values.push(row.cum_regret);
        }
        epoch_curve.push(EpochPoint {
            epoch,
            t_median: median_u64(&ts),
            median: quantile_f64(&values, 0.5),
            q01: quantile_f64(&values, 0.01),
            q99: quantile_f64(&values, 0.99),
        });
    }

    let final_ts: Vec<u64> = runs
        .iter()
        .map(|(_, rows)| rows.last().unwrap().slot)
        .collect();
    let final_regrets: Vec<f64> = runs
        .iter()
        .map(|(_, rows)| rows.last().unwrap().cum_regret)
        .collect();

    // Fit over the final half of the epoch curve, falling back to the whole
    // curve when the half is too short to fit at all.
    let (fit, fit_window) = match pick_fit_window(&epoch_curve) {
        Some((lo, hi)) => {
            let points: Vec<(u64, f64)> = epoch_curve
                .iter()
                .filter(|p| p.epoch >= lo)
                .map(|p| (p.t_median, p.median))
                .collect();
            (Some(fit_log_regret(&points)?), Some((lo, hi)))
        }
        None => (None, None),
    };

    let mut failed = failed.to_vec();
    failed.sort_unstable();
    Ok(NSummary {
        n,
        completed_runs: runs.len(),
        failed_runs: failed,
        final_t_median: median_u64(&final_ts),
        final_regret_median: quantile_f64(&final_regrets, 0.5),
        grid,
        epoch_curve,
        fit_window,
        fit,
    })
}

/// Inclusive epoch window for the fit: the final half of completed epochs,
/// widened to all of them when the half alone has fewer than eight points.
fn pick_fit_window(curve: &[EpochPoint]) -> Option<(u32, u32)> {
    let hi = curve.last()?.epoch;
    let lo = hi / 2 + 1;
    if hi - lo + 1 >= 8 {
        Some((lo, hi))
    } else if curve.len() >= 8 {
        Some((curve.first().unwrap().epoch, hi))
    } else {
        None
    }
}
