//! Experiment orchestration on top of `fairband-core`: Monte-Carlo sweeps
//! over agent counts, resumable per-run CSV artifacts, aggregation into
//! quantile curves, and the log-horizon regression used to judge regret
//! growth.
//!
//! Layout:
//! * [`spec`]: the experiment description (base simulation config, run
//!   count, agent-count sweep, output directory) and the manifest that
//!   pins it next to the artifacts it produced.
//! * [`run`]: the sweep driver: one simulation per (n, run index), skip
//!   logic for already-written runs, failure collection.
//! * [`aggregate`]: quantile curves on the common checkpoint grid, the
//!   per-epoch regret curve, and `fit_log_regret`.
//! * [`emit`]: CSV/JSON artifact formats and overwrite discipline.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub mod aggregate;
pub mod emit;
pub mod run;
pub mod spec;

pub use aggregate::{
    aggregate_runs, fit_log_regret, AggregateReport, EpochPoint, FitResult, GridPoint, NSummary,
};
pub use emit::{write_if_changed, RunRow, AGG_HEADER, PLOT_HEADER, RUN_HEADER};
pub use run::{run_monte_carlo, RunFailure, SweepOutcome};
pub use spec::{ExperimentSpec, Manifest};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// The experiment description itself is unusable.
    #[error("config error: {0}")]
    Config(String),
    /// The target exists with different contents and `force` was not set.
    #[error("refusing to overwrite {}; pass force to replace it", path.display())]
    WouldOverwrite { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// The regression needs at least eight checkpoints to say anything.
    #[error("fit needs at least 8 points, got {0}")]
    TooFewPoints(usize),
    #[error("fit points must have strictly increasing slot counts")]
    UnorderedPoints,
    #[error(transparent)]
    Sim(#[from] fairband_core::SimError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
