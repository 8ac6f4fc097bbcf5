//! Channel semantics: who collides with whom, what rewards are realized,
//! and how pseudo-regret is accounted.
//!
//! Arms are indexed `0..n` throughout the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(
        "matrix must be square and non-empty, got {rows} rows, {cols} entries in row {bad_row}"
    )]
    NotSquare {
        rows: usize,
        cols: usize,
        bad_row: usize,
    },
    #[error("entry ({row},{col}) = {value} must be positive and finite")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("support {support} at ({row},{col}) is below the mean {mean}")]
    SupportBelowMean {
        row: usize,
        col: usize,
        support: f64,
        mean: f64,
    },
    #[error("action profile has {got} entries, expected {expected}")]
    ProfileLength { got: usize, expected: usize },
    #[error("agent {agent} chose arm {arm}, out of range for {n} arms")]
    ArmOutOfRange { agent: usize, arm: usize, n: usize },
    #[error("cumulative regret decreased by {drop} at slot {slot}")]
    RegretDecreased { slot: u64, drop: f64 },
}

/// Dense row-major square matrix of `f64`. Row = agent, column = arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let n = rows.len();
        if n == 0 {
            return Err(ModelError::NotSquare {
                rows: 0,
                cols: 0,
                bad_row: 0,
            });
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(ModelError::NotSquare {
                    rows: n,
                    cols: r.len(),
                    bad_row: i,
                });
            }
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_flat(n: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if n == 0 || data.len() != n * n {
            return Err(ModelError::NotSquare {
                rows: n,
                cols: data.len(),
                bad_row: 0,
            });
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Distribution family shared by every entry of a [`RewardModel`].
///
/// Each family is parameterized per entry by its support bound `s` and has
/// a fixed mean-to-support ratio, so a mean matrix pins the model down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    /// Uniform on `(0, s]`; mean `s/2`.
    Uniform,
    /// Triangular on `(0, s]` with the mode at `s`; mean `2s/3`.
    TriangularPeak,
}

/// Ground-truth reward description: positive mean matrix, per-entry support
/// bounds, and the distribution family used to realize samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    means: SquareMatrix,
    supports: SquareMatrix,
    kind: RewardKind,
}

impl RewardModel {
    /// Uniform model: each entry is uniform on `(0, 2 * mean]`.
    pub fn uniform(means: SquareMatrix) -> Result<Self, ModelError> {
        Self::with_kind(means, RewardKind::Uniform)
    }

    /// Triangular model peaked at the support: each entry lives on
    /// `(0, 1.5 * mean]`.
    pub fn triangular_peak(means: SquareMatrix) -> Result<Self, ModelError> {
        Self::with_kind(means, RewardKind::TriangularPeak)
    }

    pub fn with_kind(means: SquareMatrix, kind: RewardKind) -> Result<Self, ModelError> {
        let factor = match kind {
            RewardKind::Uniform => 2.0,
            RewardKind::TriangularPeak => 1.5,
        };
        let n = means.n();
        let mut support = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let m = means.get(row, col);
                if !(m.is_finite() && m > 0.0) {
                    return Err(ModelError::BadEntry { row, col, value: m });
                }
                let s = factor * m;
                if s < m {
                    return Err(ModelError::SupportBelowMean {
                        row,
                        col,
                        support: s,
                        mean: m,
                    });
                }
                support.push(s);
            }
        }
        let supports = SquareMatrix::from_flat(n, support)?;
        Ok(Self {
            means,
            supports,
            kind,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.means.n()
    }

    pub fn means(&self) -> &SquareMatrix {
        &self.means
    }

    pub fn supports(&self) -> &SquareMatrix {
        &self.supports
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    /// Largest support bound in the model; every sample lies in `(0, B]`.
    pub fn global_support(&self) -> f64 {
        self.supports.max_entry()
    }

    /// Draw one sample for agent `row` on arm `col`. Samples are strictly
    /// positive, so a zero observation always means a collision.
    pub fn sample<R: Rng>(&self, row: usize, col: usize, rng: &mut R) -> f64 {
        let s = self.supports.get(row, col);
        // 1 - gen::<f64>() lies in (0, 1], keeping samples away from zero.
        let u: f64 = 1.0 - rng.gen::<f64>();
        match self.kind {
            RewardKind::Uniform => s * u,
            RewardKind::TriangularPeak => s * u.sqrt(),
        }
    }
}

/// One arm choice per agent for a single slot; arms are `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionProfile {
    choices: Vec<usize>,
    n_arms: usize,
}

impl ActionProfile {
    pub fn new(choices: Vec<usize>, n_arms: usize) -> Result<Self, ModelError> {
        if choices.len() != n_arms {
            return Err(ModelError::ProfileLength {
                got: choices.len(),
                expected: n_arms,
            });
        }
        for (agent, &arm) in choices.iter().enumerate() {
            if arm >= n_arms {
                return Err(ModelError::ArmOutOfRange {
                    agent,
                    arm,
                    n: n_arms,
                });
            }
        }
        Ok(Self { choices, n_arms })
    }

    #[inline]
    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    #[inline]
    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    /// Recover the backing vector, letting hot loops rebuild profiles
    /// without reallocating.
    pub fn into_choices(self) -> Vec<usize> {
        self.choices
    }
}

/// Per-arm free/busy indicator for one slot: `free[m]` is `true` unless two
/// or more agents chose arm `m`. An agent on a `true` arm keeps its sample.
pub fn collision_indicator(profile: &ActionProfile) -> Vec<bool> {
    let mut counts = vec![0u32; profile.n_arms()];
    for &arm in profile.choices() {
        counts[arm] += 1;
    }
    counts.into_iter().map(|c| c < 2).collect()
}

/// What one agent observes after a slot resolves: its own realized reward
/// and whether its arm was free of other agents. A collision forces the
/// reward to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotFeedback {
    pub reward: f64,
    pub no_collision: bool,
}

impl SlotFeedback {
    pub fn collided() -> Self {
        Self {
            reward: 0.0,
            no_collision: false,
        }
    }

    pub fn delivered(reward: f64) -> Self {
        debug_assert!(reward > 0.0);
        Self {
            reward,
            no_collision: true,
        }
    }
}

/// Per-slot pseudo-regret increment: the max-min benchmark value minus the
/// utility of the worst-off agent under `profile`, with collisions zeroing
/// the affected agents.
pub fn pseudo_regret_increment(model: &RewardModel, rho_star: f64, profile: &ActionProfile) -> f64 {
    let free = collision_indicator(profile);
    let mut worst = f64::INFINITY;
    for (agent, &arm) in profile.choices().iter().enumerate() {
        let u = if free[arm] {
            model.means().get(agent, arm)
        } else {
            0.0
        };
        if u < worst {
            worst = u;
        }
    }
    rho_star - worst
}

/// Phase tag attached to trace checkpoints and epoch marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TracePhase {
    Ordering,
    Exploration,
    Matching,
    Exploitation,
}

impl TracePhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            TracePhase::Ordering => "ordering",
            TracePhase::Exploration => "exploration",
            TracePhase::Matching => "matching",
            TracePhase::Exploitation => "exploitation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Slot count at the checkpoint (1-based: 1 = after the first slot).
    pub slot: u64,
    pub cum_regret: f64,
    /// Epoch the slot belongs to; 0 during the initial ordering phase.
    pub epoch: u32,
    pub phase: TracePhase,
}

/// Span of slots covered by one (epoch, phase) stretch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochMark {
    pub epoch: u32,
    pub phase: TracePhase,
    /// First slot of the stretch (1-based).
    pub start_slot: u64,
    /// Last slot of the stretch, inclusive.
    pub end_slot: u64,
}

/// Cumulative pseudo-regret series with phase annotations.
///
/// Increments are nonnegative up to floating-point noise; `push` rejects
/// any decrease beyond 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub rho_star: f64,
    checkpoints: Vec<Checkpoint>,
    marks: Vec<EpochMark>,
}

const REGRET_DROP_TOLERANCE: f64 = 1e-12;

impl RegretTrace {
    pub fn new(rho_star: f64) -> Self {
        Self {
            rho_star,
            checkpoints: Vec::new(),
            marks: Vec::new(),
        }
    }

    pub fn push(&mut self, cp: Checkpoint) -> Result<(), ModelError> {
        if let Some(last) = self.checkpoints.last() {
            let drop = last.cum_regret - cp.cum_regret;
            if drop > REGRET_DROP_TOLERANCE {
                return Err(ModelError::RegretDecreased {
                    slot: cp.slot,
                    drop,
                });
            }
        }
        self.checkpoints.push(cp);
        Ok(())
    }

    pub fn push_mark(&mut self, mark: EpochMark) {
        self.marks.push(mark);
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn marks(&self) -> &[EpochMark] {
        &self.marks
    }
}
