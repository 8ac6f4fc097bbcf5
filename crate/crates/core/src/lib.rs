//! Simulation library for decentralized max-min fair arm allocation.
//!
//! N agents repeatedly pick one of N arms on a shared collision channel:
//! whenever two or more agents pick the same arm, every agent on that arm
//! receives zero. Arm means are unknown, agent-specific, and only learned
//! through the agent's own samples. The protocol implemented here reaches,
//! without any message exchange, an assignment whose worst-off agent is
//! (near) max-min optimal, using deliberate collisions as a one-bit
//! signaling primitive.
//!
//! Layout:
//! * [`model`]: channel semantics: action profiles, collision indicator,
//!   reward realization, pseudo-regret accounting.
//! * [`oracle`]: centralized reference solvers (brute force, threshold
//!   graphs, bipartite matching, bisection) used for baselines and tests.
//! * [`stats`]: per-agent running estimates and the phase-length formulas
//!   derived from them.
//! * [`agent`]: the slot-driven protocol state machine (ordering,
//!   exploration, matching via distributed auction, exploitation).
//! * [`sim`]: the synchronous simulator driving N agents against the
//!   channel, producing regret traces and per-epoch records.

pub mod agent;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod stats;

pub use agent::{
    simulate_auction, simulate_matching, Agent, AuctionOutcome, C1Variant, MatchSummary,
    MatchingOutcome, PhaseKind, ProtocolConfig, SlotKind,
};
pub use model::{
    collision_indicator, pseudo_regret_increment, ActionProfile, Checkpoint, EpochMark, ModelError,
    RegretTrace, RewardKind, RewardModel, SlotFeedback, SquareMatrix, TracePhase,
};
pub use oracle::{
    has_perfect_matching, maxmin_bisection, maxmin_bruteforce, maxmin_exact, min_gap,
    perfect_matching, threshold_graph, MaxMinSolution, OracleError, ThresholdGraph,
};
pub use sim::{
    run_simulation, CheckpointMode, EpochRecord, RewardSpec, SimError, SimulationConfig,
    SimulationResult, Simulator,
};
pub use stats::{
    exploitation_base, exploitation_slots, exploration_length, gap_estimate, support_ucb,
    ArmEstimate, StatsError,
};
