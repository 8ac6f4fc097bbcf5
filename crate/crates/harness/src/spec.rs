//! Experiment descriptions and the manifest pinned next to the artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use fairband_core::{ProtocolConfig, RewardSpec, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// A Monte-Carlo sweep: the same base configuration replayed over
/// `n_runs` seeds for every agent count in `n_agents`.
///
/// Run `i` uses seed `base.seed + i`, so a spec names every simulation
/// it contains and two runs of the same spec produce identical artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Template configuration; its generator and protocol constants are
    /// re-derived per agent count during a sweep.
    pub base: SimulationConfig,
    pub n_runs: usize,
    /// Agent counts to sweep; empty means the base config's count only.
    #[serde(default)]
    pub n_agents: Vec<usize>,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn new(base: SimulationConfig, n_runs: usize, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            base,
            n_runs,
            n_agents: Vec::new(),
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_runs == 0 {
            return Err(HarnessError::Config("n_runs must be at least 1".into()));
        }
        if self.n_agents.iter().any(|&n| n == 0) {
            return Err(HarnessError::Config("agent counts must be positive".into()));
        }
        for &n in &self.n_agents {
            self.config_for(n, 0)?;
        }
        Ok(())
    }

    /// Agent counts the sweep covers, in spec order.
    pub fn agent_counts(&self) -> Vec<usize> {
        if self.n_agents.is_empty() {
            vec![self.base.reward.n_arms()]
        } else {
            self.n_agents.clone()
        }
    }

    /// Concrete configuration for one (agent count, run index) cell.
    ///
    /// Generated reward models are resized to `n`; an explicit matrix only
    /// supports its own size, anything else is a config error.
    pub fn config_for(&self, n: usize, run_index: usize) -> Result<SimulationConfig, HarnessError> {
        let reward = match &self.base.reward {
            RewardSpec::Explicit { rows, kind } => {
                if rows.len() != n {
                    return Err(HarnessError::Config(format!(
                        "explicit {}x{} matrix cannot be swept to n={n}",
                        rows.len(),
                        rows.len(),
                    )));
                }
                RewardSpec::Explicit {
                    rows: rows.clone(),
                    kind: *kind,
                }
            }
            RewardSpec::Latin { kind, .. } => RewardSpec::Latin { n, kind: *kind },
            RewardSpec::Grid { kind, .. } => RewardSpec::Grid { n, kind: *kind },
        };
        let mut protocol = ProtocolConfig::new(n);
        protocol.exploration_scale = self.base.protocol.exploration_scale;
        protocol.ordering_beta = self.base.protocol.ordering_beta;
        protocol.c3_divisor = self.base.protocol.c3_divisor;
        protocol.c1_variant = self.base.protocol.c1_variant;
        Ok(SimulationConfig {
            seed: self.base.seed.wrapping_add(run_index as u64),
            reward,
            protocol,
            epochs: self.base.epochs,
            max_slots: self.base.max_slots,
            checkpoints: self.base.checkpoints,
            skip_ordering: self.base.skip_ordering,
        })
    }

    /// Whether two specs describe the same experiment, no matter where
    /// their artifacts land.
    pub fn same_experiment(&self, other: &ExperimentSpec) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.out_dir = PathBuf::new();
        b.out_dir = PathBuf::new();
        a == b
    }
}

/// What `manifest.json` holds: the `ExperimentSpec` plus the code version
/// that ran it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub spec: ExperimentSpec,
}

impl Manifest {
    pub fn for_spec(spec: &ExperimentSpec) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>, HarnessError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}
