//! The decentralized protocol, expressed as a per-agent state machine
//! driven by exactly two calls per slot: `act` (choose an arm) and
//! `observe` (digest the slot's feedback).
//!
//! Agents never exchange messages and never read each other's state; every
//! bit of coordination travels through deliberate collisions. The phases:
//!
//! 1. **Ordering**: agents grab distinct arms by random probing. Slots
//!    alternate between probe (even) and echo (odd) steps: an unassigned
//!    agent re-probes the arm it just collided on, and a clean echo tells
//!    it the arm belongs to a settled agent, so it can drop it from its
//!    candidate list. Settled agents that were probed vacate during the
//!    echo so the signal stays clean. Each round ends with a verification
//!    window: anyone not settled (or disturbed this round) sweeps all arms,
//!    forcing collisions that mean "keep going"; a silent window is
//!    unanimous and ends the phase with the claimed arms as a permutation
//!    of order indices.
//! 2. **Exploration**: round-robin sampling offset by order index, so all
//!    agents rotate in lockstep and never collide. Sampling runs in blocks;
//!    after each block a signal window lets slower agents (larger support
//!    estimate, hence a larger sample target) hold everyone in the phase.
//! 3. **Matching**: a threshold search for the max-min value. Each tested
//!    threshold runs a distributed auction (below); feasibility and the
//!    stopping rule are each announced through an N-slot signal window.
//! 4. **Exploitation**: play the matched arm; lengths grow geometrically
//!    with a data-dependent base. The earliest finisher sweeps all arms in
//!    an aligned window, which tells everyone else the epoch is over.
//!
//! The auction needs one bidder per iteration while everyone else stays
//! "silent", and no agent can be silent when every agent must play an
//! arm. Each iteration therefore spans two slots and a bid is defined
//! as a collision on *both*: the bidder repeats its claim, idle
//! unassigned agents play two different arms (their order arm, then a
//! common dump arm), so no combination of idle agents can ever
//! double-hit a defender. Defenders treat a double-hit as eviction,
//! single hits as noise.

use crate::model::SlotFeedback;
use crate::stats::{
    exploitation_base, exploitation_slots, exploration_length, gap_estimate, row_support_ucb,
    ArmEstimate,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::stats::C1Variant;

/// Bisection narrower than this stops regardless of the gap estimate;
/// guards the zero-gap degenerate case from looping forever.
const WIDTH_FLOOR: f64 = 1e-12;

/// Protocol constants shared by all agents of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_agents: usize,
    /// Sample-budget scale L; exploration targets and exploitation bases
    /// both grow with it.
    pub exploration_scale: u64,
    /// Ordering round length multiplier (probe pairs per round
    /// = ceil(beta * n * log2 n)).
    pub ordering_beta: f64,
    /// Divisor in the exploitation-base exponent.
    pub c3_divisor: f64,
    pub c1_variant: C1Variant,
}

impl ProtocolConfig {
    pub fn new(n_agents: usize) -> Self {
        Self {
            n_agents,
            exploration_scale: 100,
            ordering_beta: 4.0,
            c3_divisor: 32.0,
            c1_variant: C1Variant::Quadratic,
        }
    }

    fn ordering_pairs(&self) -> usize {
        let n = self.n_agents as f64;
        ((self.ordering_beta * n * n.log2()).ceil() as usize).max(1)
    }
}

/// Coarse protocol phase, stable across a stretch of slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Ordering,
    Exploration,
    Matching,
    Exploitation,
}

/// Fine-grained slot role, used by the simulator to attribute collisions
/// and regret to schedule versus signaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    OrderingProbe,
    OrderingVerify,
    ExploreSample,
    ExploreSignal,
    AuctionSlot,
    FeasibilitySignal,
    StopSignal,
    Exploit,
    ExploitSweep,
}

/// What one matching phase concluded; kept on the agent for inspection
/// after the phase has moved on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub tau_min: f64,
    pub tau_max: f64,
    pub threshold_tests: u32,
    pub delta_hat: f64,
    /// No feasible threshold was ever found; the agent fell back to its
    /// order arm for this epoch.
    pub fallback: bool,
}

// ---- ordering ----

#[derive(Debug, Clone)]
struct OrderingState {
    claimed: Option<usize>,
    available: Vec<bool>,
    /// Probe pairs per round.
    pairs: usize,
    /// Slot position within the round: [0, 2*pairs) probes, then n
    /// verification slots.
    pos: usize,
    probe: Option<usize>,
    vacate: bool,
    dirty: bool,
    verify_collision: bool,
    sweeping: bool,
}

impl OrderingState {
    fn new(n: usize, pairs: usize) -> Self {
        Self {
            claimed: None,
            available: vec![true; n],
            pairs,
            pos: 0,
            probe: None,
            vacate: false,
            dirty: false,
            verify_collision: false,
            sweeping: false,
        }
    }
}

// ---- exploration ----

#[derive(Debug, Clone)]
struct ExplorationState {
    /// Total counted sampling slots to take: per-arm target times n.
    target: u64,
    counted: u64,
    /// All sampling slots so far including post-target padding; drives the
    /// round-robin rotation, which must stay in lockstep across agents.
    rotation: u64,
    /// Sampling slots since the last signal window.
    block: u64,
    /// Some(pos) while inside the signal window.
    window: Option<WindowState>,
    /// Frozen at window entry: still short of the target, so sweep.
    window_sweep: bool,
}

#[derive(Debug, Clone, Copy)]
struct WindowState {
    pos: usize,
    collision: bool,
}

impl WindowState {
    fn new() -> Self {
        Self {
            pos: 0,
            collision: false,
        }
    }
}

// ---- matching ----

/// Local auction participant for one threshold test.
///
/// Iterations take two slots (A then B). Defenders hold their arm on both;
/// the iteration's designated bidder (by order index) claims its cheapest
/// eligible arm on both; every other unassigned agent "parks": its order
/// arm on A (detouring if that is the dump arm), the common dump arm on B.
/// A defender hit on both slots was genuinely bid on and relinquishes,
/// bumping its local price for that arm; a single hit is parking noise and
/// is ignored.
#[derive(Debug, Clone)]
pub(crate) struct AuctionAgent {
    n: usize,
    order: usize,
    eligible: Vec<bool>,
    any_eligible: bool,
    prices: Vec<u32>,
    assigned: Option<usize>,
    /// 1-based iteration counter.
    iter: u64,
    budget: u64,
    /// 0 = slot A, 1 = slot B.
    subslot: u8,
    bid: Option<usize>,
    pending_install: bool,
    hit_a: bool,
}

pub(crate) fn auction_budget(n: usize) -> u64 {
    (n * n * (n - 1)) as u64
}

impl AuctionAgent {
    fn new(n: usize, order: usize, eligible: Vec<bool>) -> Self {
        debug_assert_eq!(eligible.len(), n);
        let any_eligible = eligible.iter().any(|&e| e);
        Self {
            n,
            order,
            eligible,
            any_eligible,
            prices: vec![0; n],
            assigned: None,
            iter: 1,
            budget: auction_budget(n),
            subslot: 0,
            bid: None,
            pending_install: false,
            hit_a: false,
        }
    }

    fn finished(&self) -> bool {
        self.iter > self.budget
    }

    /// Active order index of the current iteration.
    fn turn(&self) -> usize {
        ((self.iter - 1) % self.n as u64) as usize
    }

    fn argmin_eligible(&self) -> usize {
        let mut best = usize::MAX;
        let mut best_price = u32::MAX;
        for arm in 0..self.n {
            if self.eligible[arm] && self.prices[arm] < best_price {
                best_price = self.prices[arm];
                best = arm;
            }
        }
        debug_assert!(best != usize::MAX);
        best
    }

    fn act(&mut self) -> usize {
        let j = self.turn();
        if let Some(arm) = self.assigned {
            return arm;
        }
        match self.subslot {
            0 => {
                if self.order == j && self.any_eligible {
                    let arm = self.argmin_eligible();
                    self.bid = Some(arm);
                    self.pending_install = true;
                    arm
                } else if self.order == j {
                    // its turn but nothing eligible: park, detouring off the
                    // dump arm so it cannot fake a bid
                    (j + 1) % self.n
                } else {
                    self.order
                }
            }
            _ => {
                if let Some(arm) = self.bid {
                    arm
                } else {
                    j // common dump arm
                }
            }
        }
    }

    fn observe(&mut self, no_collision: bool) {
        match self.subslot {
            0 => {
                if self.assigned.is_some() && !no_collision {
                    self.hit_a = true;
                }
                self.subslot = 1;
            }
            _ => {
                if let Some(arm) = self.assigned {
                    if self.hit_a && !no_collision {
                        // bid confirmed on both slots: relinquish and raise
                        // the local price
                        self.prices[arm] += 1;
                        self.assigned = None;
                    }
                }
                if self.pending_install {
                    self.assigned = self.bid;
                }
                self.pending_install = false;
                self.bid = None;
                self.hit_a = false;
                self.subslot = 0;
                self.iter += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum MatchSub {
    Auction,
    Feasibility(WindowState),
    Stopping { w: WindowState, sweep: bool },
}

#[derive(Debug, Clone)]
struct MatchingState {
    delta_hat: f64,
    delta_quarter: f64,
    tau: f64,
    tau_min: f64,
    tau_max: f64,
    infeasible_seen: bool,
    saved: Option<usize>,
    tests: u32,
    auc: AuctionAgent,
    sub: MatchSub,
}

// ---- exploitation ----

#[derive(Debug, Clone)]
struct ExploitationState {
    assignment: usize,
    /// First slot of this agent's sweep window: its own target rounded up
    /// to a multiple of n, so every finisher's window lands on the same
    /// alignment and staggered sweeps cannot happen.
    sweep_start: u64,
    /// Phase-local slot, 0-based.
    slot: u64,
    hit: bool,
}

#[derive(Debug, Clone)]
enum Phase {
    Ordering(OrderingState),
    Exploration(ExplorationState),
    Matching(MatchingState),
    Exploitation(ExploitationState),
}

enum Transition {
    None,
    ToExploration,
    ToMatching,
    ToExploitation { assignment: usize, fallback: bool },
    EpochDone,
}

/// One protocol participant. Drive it with exactly one `act` and one
/// `observe` per slot; all agents of a run must see the same slot sequence.
#[derive(Debug, Clone)]
pub struct Agent {
    cfg: ProtocolConfig,
    /// Private coin flips; only the ordering phase draws from it.
    rng: Option<ChaCha8Rng>,
    order: Option<usize>,
    estimates: Vec<ArmEstimate>,
    /// 0 while ordering, then the current epoch starting at 1.
    epoch: u32,
    phase: Phase,
    last_match: Option<MatchSummary>,
    acted: bool,
}

impl Agent {
    /// Agent that starts in the ordering phase and derives its order index
    /// from the arm it wins there.
    pub fn new(cfg: ProtocolConfig, rng: ChaCha8Rng) -> Self {
        let n = cfg.n_agents;
        let pairs = cfg.ordering_pairs();
        Self {
            cfg,
            rng: Some(rng),
            order: None,
            estimates: vec![ArmEstimate::default(); n],
            epoch: 0,
            phase: Phase::Ordering(OrderingState::new(n, pairs)),
            last_match: None,
            acted: false,
        }
    }

    /// Agent with a preassigned order index, skipping the ordering phase
    /// entirely. Such an agent consumes no randomness at all.
    pub fn with_order(cfg: ProtocolConfig, order: usize) -> Self {
        assert!(order < cfg.n_agents);
        let n = cfg.n_agents;
        let mut agent = Self {
            cfg,
            rng: None,
            order: Some(order),
            estimates: vec![ArmEstimate::default(); n],
            epoch: 1,
            phase: Phase::Ordering(OrderingState::new(n, 1)), // replaced below
            last_match: None,
            acted: false,
        };
        agent.enter_exploration();
        agent
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn order_index(&self) -> Option<usize> {
        self.order
    }

    pub fn estimates(&self) -> &[ArmEstimate] {
        &self.estimates
    }

    pub fn b_hat(&self) -> f64 {
        row_support_ucb(&self.estimates)
    }

    pub fn last_match(&self) -> Option<&MatchSummary> {
        self.last_match.as_ref()
    }

    /// Arm played during the current exploitation phase, if in one.
    pub fn current_assignment(&self) -> Option<usize> {
        match &self.phase {
            Phase::Exploitation(s) => Some(s.assignment),
            _ => None,
        }
    }

    /// Slots this agent will keep sitting on its exploitation arm before its
    /// own sweep window can begin. `None` outside exploitation, after a hit,
    /// once sweeping, or before the phase's first slot has run.
    pub(crate) fn exploitation_quiet(&self) -> Option<u64> {
        match &self.phase {
            Phase::Exploitation(s) if !s.hit && s.slot >= 1 && s.slot < s.sweep_start => {
                Some(s.sweep_start - s.slot)
            }
            _ => None,
        }
    }

    /// Skip `jump` sitting slots at once. Exactly equivalent to `jump`
    /// act/observe rounds in which the agent plays its assignment and sees
    /// no collision, which is the only thing that can happen while every
    /// agent of the run is still short of its sweep window.
    pub(crate) fn advance_exploitation(&mut self, jump: u64) {
        debug_assert!(!self.acted, "advance during an open slot");
        match &mut self.phase {
            Phase::Exploitation(s) => {
                debug_assert!(!s.hit && s.slot + jump <= s.sweep_start);
                s.slot += jump;
            }
            _ => unreachable!("advance outside exploitation"),
        }
    }

    pub fn phase_kind(&self) -> PhaseKind {
        match &self.phase {
            Phase::Ordering(_) => PhaseKind::Ordering,
            Phase::Exploration(_) => PhaseKind::Exploration,
            Phase::Matching(_) => PhaseKind::Matching,
            Phase::Exploitation(_) => PhaseKind::Exploitation,
        }
    }

    pub fn slot_kind(&self) -> SlotKind {
        match &self.phase {
            Phase::Ordering(s) => {
                if s.pos < 2 * s.pairs {
                    SlotKind::OrderingProbe
                } else {
                    SlotKind::OrderingVerify
                }
            }
            Phase::Exploration(s) => {
                if s.window.is_some() {
                    SlotKind::ExploreSignal
                } else {
                    SlotKind::ExploreSample
                }
            }
            Phase::Matching(s) => match &s.sub {
                MatchSub::Auction => SlotKind::AuctionSlot,
                MatchSub::Feasibility(_) => SlotKind::FeasibilitySignal,
                MatchSub::Stopping { .. } => SlotKind::StopSignal,
            },
            Phase::Exploitation(s) => {
                if !s.hit && s.slot >= s.sweep_start {
                    SlotKind::ExploitSweep
                } else {
                    SlotKind::Exploit
                }
            }
        }
    }

    /// Pick this slot's arm. Must alternate with `observe`.
    pub fn act(&mut self) -> usize {
        assert!(!self.acted, "act called twice without observe");
        self.acted = true;
        let n = self.cfg.n_agents;
        match &mut self.phase {
            Phase::Ordering(s) => {
                if s.pos < 2 * s.pairs {
                    if s.pos % 2 == 0 {
                        match s.claimed {
                            Some(arm) => arm,
                            None => {
                                let rng = self.rng.as_mut().expect("ordering needs rng");
                                let arm = pick_available(rng, &s.available);
                                s.probe = Some(arm);
                                arm
                            }
                        }
                    } else {
                        match s.claimed {
                            None => s.probe.expect("unassigned echo without probe"),
                            Some(arm) if s.vacate => (arm + 1) % n,
                            Some(arm) => arm,
                        }
                    }
                } else {
                    if s.pos == 2 * s.pairs {
                        s.sweeping = s.claimed.is_none() || s.dirty;
                    }
                    if s.sweeping {
                        s.pos - 2 * s.pairs
                    } else {
                        s.claimed.expect("settled agent in verification")
                    }
                }
            }
            Phase::Exploration(s) => match s.window {
                Some(w) => {
                    if s.window_sweep {
                        w.pos
                    } else {
                        self.order.expect("ordered") // settled agents hold their order arm
                    }
                }
                None => (self.order.expect("ordered") + s.rotation as usize) % n,
            },
            Phase::Matching(s) => match &mut s.sub {
                MatchSub::Auction => s.auc.act(),
                MatchSub::Feasibility(w) => match s.auc.assigned {
                    Some(arm) => arm,
                    None => w.pos,
                },
                MatchSub::Stopping { w, sweep } => {
                    if *sweep {
                        w.pos
                    } else {
                        self.order.expect("ordered")
                    }
                }
            },
            Phase::Exploitation(s) => {
                if !s.hit && s.slot >= s.sweep_start {
                    (s.slot % n as u64) as usize
                } else {
                    s.assignment
                }
            }
        }
    }

    /// Digest the slot's outcome; phase transitions happen here.
    pub fn observe(&mut self, fb: SlotFeedback) {
        assert!(self.acted, "observe without act");
        self.acted = false;
        let n = self.cfg.n_agents;
        let transition = match &mut self.phase {
            Phase::Ordering(s) => {
                let mut done = false;
                if s.pos < 2 * s.pairs {
                    if s.pos % 2 == 0 {
                        match s.claimed {
                            None => {
                                if fb.no_collision {
                                    s.claimed = s.probe.take();
                                } else {
                                    s.dirty = true;
                                }
                            }
                            Some(_) => {
                                if !fb.no_collision {
                                    s.dirty = true;
                                    s.vacate = true;
                                }
                            }
                        }
                    } else {
                        match s.claimed {
                            None => {
                                // echo slot: a clean re-probe means the earlier
                                // collision was with a settled agent
                                if fb.no_collision {
                                    if let Some(arm) = s.probe {
                                        s.available[arm] = false;
                                    }
                                }
                                s.probe = None;
                            }
                            Some(_) => s.vacate = false,
                        }
                    }
                    s.pos += 1;
                } else {
                    if !fb.no_collision {
                        s.verify_collision = true;
                    }
                    s.pos += 1;
                    if s.pos == 2 * s.pairs + n {
                        if s.claimed.is_some() && !s.verify_collision {
                            done = true;
                        } else {
                            s.pos = 0;
                            s.probe = None;
                            s.vacate = false;
                            s.dirty = false;
                            s.verify_collision = false;
                            s.sweeping = false;
                        }
                    }
                }
                if done {
                    self.order = s.claimed;
                    Transition::ToExploration
                } else {
                    Transition::None
                }
            }
            Phase::Exploration(s) => {
                let mut t = Transition::None;
                match &mut s.window {
                    Some(w) => {
                        if !fb.no_collision {
                            w.collision = true;
                        }
                        w.pos += 1;
                        if w.pos == n {
                            if s.counted >= s.target && !w.collision {
                                t = Transition::ToMatching;
                            } else {
                                s.window = None;
                            }
                        }
                    }
                    None => {
                        if s.counted < s.target && fb.no_collision {
                            let arm = (self.order.expect("ordered") + s.rotation as usize) % n;
                            let _ = self.estimates[arm].update(fb.reward);
                            s.counted += 1;
                        }
                        s.rotation += 1;
                        s.block += 1;
                        if s.block == self.cfg.exploration_scale {
                            s.block = 0;
                            s.window_sweep = s.counted < s.target;
                            s.window = Some(WindowState::new());
                        }
                    }
                }
                t
            }
            Phase::Matching(s) => {
                let mut t = Transition::None;
                match &mut s.sub {
                    MatchSub::Auction => {
                        s.auc.observe(fb.no_collision);
                        if s.auc.finished() {
                            s.sub = MatchSub::Feasibility(WindowState::new());
                        }
                    }
                    MatchSub::Feasibility(w) => {
                        if !fb.no_collision {
                            w.collision = true;
                        }
                        w.pos += 1;
                        if w.pos == n {
                            let feasible = s.auc.assigned.is_some() && !w.collision;
                            if feasible {
                                s.tau_min = s.tau;
                                s.saved = s.auc.assigned;
                            } else {
                                s.tau_max = s.tau;
                                s.infeasible_seen = true;
                            }
                            let width = s.tau_max - s.tau_min;
                            let sweep = !s.infeasible_seen
                                || (width >= s.delta_quarter && width >= WIDTH_FLOOR);
                            s.sub = MatchSub::Stopping {
                                w: WindowState::new(),
                                sweep,
                            };
                        }
                    }
                    MatchSub::Stopping { w, sweep } => {
                        if !fb.no_collision {
                            w.collision = true;
                        }
                        w.pos += 1;
                        if w.pos == n {
                            if !*sweep && !w.collision {
                                t = Transition::ToExploitation {
                                    assignment: s
                                        .saved
                                        .unwrap_or_else(|| self.order.expect("ordered")),
                                    fallback: s.saved.is_none(),
                                };
                            } else {
                                s.tau = if s.infeasible_seen {
                                    0.5 * (s.tau_min + s.tau_max)
                                } else {
                                    s.tau * 2.0
                                };
                                s.tests += 1;
                                let eligible: Vec<bool> = self
                                    .estimates
                                    .iter()
                                    .map(|e| e.mean_estimate >= s.tau)
                                    .collect();
                                s.auc =
                                    AuctionAgent::new(n, self.order.expect("ordered"), eligible);
                                s.sub = if s.auc.finished() {
                                    MatchSub::Feasibility(WindowState::new())
                                } else {
                                    MatchSub::Auction
                                };
                            }
                        }
                    }
                }
                t
            }
            Phase::Exploitation(s) => {
                let sweeping = !s.hit && s.slot >= s.sweep_start;
                if !sweeping && !fb.no_collision {
                    s.hit = true;
                }
                let at_boundary = s.slot % n as u64 == n as u64 - 1;
                if at_boundary && (s.hit || s.slot >= s.sweep_start) {
                    Transition::EpochDone
                } else {
                    s.slot += 1;
                    Transition::None
                }
            }
        };
        match transition {
            Transition::None => {}
            Transition::ToExploration => {
                self.epoch = 1;
                self.enter_exploration();
            }
            Transition::ToMatching => self.enter_matching(),
            Transition::ToExploitation {
                assignment,
                fallback,
            } => self.enter_exploitation(assignment, fallback),
            Transition::EpochDone => {
                self.epoch += 1;
                self.enter_exploration();
            }
        }
    }

    fn enter_exploration(&mut self) {
        let c1 = exploration_length(
            self.b_hat(),
            self.cfg.exploration_scale,
            self.cfg.n_agents,
            self.cfg.c1_variant,
        )
        .expect("finite support estimate");
        self.phase = Phase::Exploration(ExplorationState {
            target: c1 * self.cfg.n_agents as u64,
            counted: 0,
            rotation: 0,
            block: 0,
            window: None,
            window_sweep: false,
        });
    }

    fn enter_matching(&mut self) {
        let n = self.cfg.n_agents;
        let delta_hat = if n >= 2 {
            let means: Vec<f64> = self.estimates.iter().map(|e| e.mean_estimate).collect();
            gap_estimate(&means).expect("n >= 2")
        } else {
            f64::INFINITY
        };
        let tau = 1.0;
        let eligible: Vec<bool> = self
            .estimates
            .iter()
            .map(|e| e.mean_estimate >= tau)
            .collect();
        let auc = AuctionAgent::new(n, self.order.expect("ordered"), eligible);
        let sub = if auc.finished() {
            MatchSub::Feasibility(WindowState::new())
        } else {
            MatchSub::Auction
        };
        self.phase = Phase::Matching(MatchingState {
            delta_hat,
            delta_quarter: delta_hat / 4.0,
            tau,
            tau_min: 0.0,
            tau_max: 1.0,
            infeasible_seen: false,
            saved: None,
            tests: 1,
            auc,
            sub,
        });
    }

    fn enter_exploitation(&mut self, assignment: usize, fallback: bool) {
        let n = self.cfg.n_agents as u64;
        let (delta_hat, tau_min, tau_max, tests) = match &self.phase {
            Phase::Matching(s) => (s.delta_hat, s.tau_min, s.tau_max, s.tests),
            _ => unreachable!("exploitation entered outside matching"),
        };
        self.last_match = Some(MatchSummary {
            tau_min,
            tau_max,
            threshold_tests: tests,
            delta_hat,
            fallback,
        });
        let base = exploitation_base(delta_hat, self.cfg.exploration_scale, self.cfg.c3_divisor)
            .expect("valid config");
        let t_exp = exploitation_slots(base, self.epoch);
        let sweep_start = t_exp.div_ceil(n) * n;
        self.phase = Phase::Exploitation(ExploitationState {
            assignment,
            sweep_start,
            slot: 0,
            hit: false,
        });
    }
}

fn pick_available<R: Rng>(rng: &mut R, available: &[bool]) -> usize {
    let count = available.iter().filter(|&&a| a).count();
    debug_assert!(count > 0, "candidate list exhausted");
    let mut k = rng.gen_range(0..count);
    for (arm, &a) in available.iter().enumerate() {
        if a {
            if k == 0 {
                return arm;
            }
            k -= 1;
        }
    }
    unreachable!()
}

// ---- standalone drivers ----

/// Result of driving one auction to its fixed iteration budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    pub feasible: bool,
    /// Arm per agent when feasible.
    pub assignment: Option<Vec<usize>>,
    /// Iterations executed; always the fixed budget n^2 (n-1).
    pub iterations: u64,
}

/// Run the distributed auction alone on an eligibility matrix
/// (`eligible[agent][arm]`), with agent index as order index. Returns
/// whether every agent ended assigned, which happens exactly when the
/// matrix admits a perfect matching.
pub fn simulate_auction(eligible: &[Vec<bool>]) -> AuctionOutcome {
    let n = eligible.len();
    assert!(n > 0);
    assert!(eligible.iter().all(|r| r.len() == n));
    let mut agents: Vec<AuctionAgent> = (0..n)
        .map(|i| AuctionAgent::new(n, i, eligible[i].clone()))
        .collect();
    let budget = auction_budget(n);
    let mut counts = vec![0u32; n];
    let mut arms = vec![0usize; n];
    for _ in 0..budget {
        for _sub in 0..2 {
            counts.iter_mut().for_each(|c| *c = 0);
            for (i, agent) in agents.iter_mut().enumerate() {
                arms[i] = agent.act();
                counts[arms[i]] += 1;
            }
            for (i, agent) in agents.iter_mut().enumerate() {
                agent.observe(counts[arms[i]] < 2);
            }
        }
    }
    let assigned: Vec<Option<usize>> = agents.iter().map(|a| a.assigned).collect();
    let feasible = assigned.iter().all(|a| a.is_some());
    let assignment = if feasible {
        let v: Vec<usize> = assigned.into_iter().map(|a| a.unwrap()).collect();
        let mut seen = vec![false; n];
        for &arm in &v {
            assert!(!seen[arm], "two agents hold the same arm");
            seen[arm] = true;
        }
        Some(v)
    } else {
        None
    };
    AuctionOutcome {
        feasible,
        assignment,
        iterations: budget,
    }
}

/// Result of driving a full matching phase in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingOutcome {
    pub assignment: Vec<usize>,
    pub fallback: bool,
    pub tau_min: f64,
    pub tau_max: f64,
    pub threshold_tests: u32,
    pub slots: u64,
}

/// Drive the threshold search + auction machinery for agents holding the
/// given estimate rows (agent index as order index), until all of them
/// enter exploitation. No estimates are updated along the way, so this
/// isolates the matching logic for testing.
pub fn simulate_matching(estimate_rows: &[Vec<f64>], cfg: &ProtocolConfig) -> MatchingOutcome {
    let n = estimate_rows.len();
    assert_eq!(n, cfg.n_agents);
    assert!(estimate_rows.iter().all(|r| r.len() == n));
    let mut agents: Vec<Agent> = (0..n)
        .map(|i| {
            let mut a = Agent::with_order(cfg.clone(), i);
            for (arm, &mean) in estimate_rows[i].iter().enumerate() {
                a.estimates[arm] = ArmEstimate {
                    mean_estimate: mean,
                    visit_count: 1,
                    max_sample: mean,
                };
            }
            a.enter_matching();
            a
        })
        .collect();
    let mut counts = vec![0u32; n];
    let mut arms = vec![0usize; n];
    let mut slots = 0u64;
    while agents.iter().any(|a| a.phase_kind() == PhaseKind::Matching) {
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, agent) in agents.iter_mut().enumerate() {
            arms[i] = agent.act();
            counts[arms[i]] += 1;
        }
        for (i, agent) in agents.iter_mut().enumerate() {
            let free = counts[arms[i]] < 2;
            let fb = if free {
                SlotFeedback::delivered(1.0)
            } else {
                SlotFeedback::collided()
            };
            agent.observe(fb);
        }
        slots += 1;
        assert!(slots < 200_000_000, "matching failed to terminate");
    }
    let first = agents[0].last_match.expect("matching ran");
    for a in &agents {
        let m = a.last_match.expect("matching ran");
        assert_eq!(m.fallback, first.fallback);
    }
    MatchingOutcome {
        assignment: agents
            .iter()
            .map(|a| a.current_assignment().expect("exploiting"))
            .collect(),
        fallback: first.fallback,
        tau_min: first.tau_min,
        tau_max: first.tau_max,
        threshold_tests: first.threshold_tests,
        slots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{perfect_matching, ThresholdGraph};
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn drive_slot(agents: &mut [Agent], reward_of: impl Fn(usize, usize) -> f64) -> Vec<usize> {
        let n = agents.len();
        let mut counts = vec![0u32; n];
        let arms: Vec<usize> = agents.iter_mut().map(|a| a.act()).collect();
        for &arm in &arms {
            counts[arm] += 1;
        }
        for (i, agent) in agents.iter_mut().enumerate() {
            let fb = if counts[arms[i]] < 2 {
                SlotFeedback::delivered(reward_of(i, arms[i]))
            } else {
                SlotFeedback::collided()
            };
            agent.observe(fb);
        }
        arms
    }

    #[test]
    fn auction_identity_instance_settles_without_evictions() {
        let n = 5;
        let eligible: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
        let out = simulate_auction(&eligible);
        assert!(out.feasible);
        assert_eq!(out.assignment.unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(out.iterations, auction_budget(n));
    }

    #[test]
    fn auction_single_column_is_infeasible() {
        let n = 4;
        let eligible: Vec<Vec<bool>> = (0..n).map(|_| (0..n).map(|j| j == 0).collect()).collect();
        let out = simulate_auction(&eligible);
        assert!(!out.feasible);
        assert!(out.assignment.is_none());
    }

    #[test]
    fn auction_crossed_preferences_resolve() {
        // agent 0 can take only arm 1; agent 1 can take both; forces an
        // eviction chain
        let eligible = vec![vec![false, true], vec![true, true]];
        let out = simulate_auction(&eligible);
        assert!(out.feasible);
        assert_eq!(out.assignment.unwrap(), vec![1, 0]);
    }

    #[test]
    fn auction_agrees_with_matching_oracle() {
        let mut rng = stream_rng(99, Stream::ModelGen);
        for n in 3..=8usize {
            for case in 0..200 {
                let density = 0.2 + 0.6 * rng.gen::<f64>();
                let eligible: Vec<Vec<bool>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.gen::<f64>() < density).collect())
                    .collect();
                let want = perfect_matching(&ThresholdGraph::from_eligibility(&eligible));
                let got = simulate_auction(&eligible);
                assert_eq!(
                    got.feasible,
                    want.is_some(),
                    "n={n} case={case} eligibility={eligible:?}"
                );
                if let Some(assignment) = got.assignment {
                    for (agent, &arm) in assignment.iter().enumerate() {
                        assert!(
                            eligible[agent][arm],
                            "agent {agent} on ineligible arm {arm}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ordering_single_agent_claims_immediately() {
        let cfg = ProtocolConfig::new(1);
        let mut agents = vec![Agent::new(cfg, stream_rng(0, Stream::Agent(0)))];
        let mut slots = 0;
        while agents[0].phase_kind() == PhaseKind::Ordering {
            drive_slot(&mut agents, |_, _| 0.5);
            slots += 1;
            assert!(slots < 100);
        }
        assert_eq!(agents[0].order_index(), Some(0));
        // one probe pair + one verification slot
        assert_eq!(slots, 3);
    }

    #[test]
    fn ordering_produces_permutation_and_synchronized_exit() {
        for n in [2usize, 3, 5, 8] {
            for seed in 0..40u64 {
                let cfg = ProtocolConfig::new(n);
                let mut agents: Vec<Agent> = (0..n)
                    .map(|i| Agent::new(cfg.clone(), stream_rng(seed, Stream::Agent(i))))
                    .collect();
                let mut slots = 0u64;
                while agents.iter().any(|a| a.phase_kind() == PhaseKind::Ordering) {
                    // all agents must share the phase: once anyone leaves,
                    // everyone must have left on the same slot
                    assert!(
                        agents.iter().all(|a| a.phase_kind() == PhaseKind::Ordering),
                        "ordering exit desynchronized at n={n} seed={seed}"
                    );
                    drive_slot(&mut agents, |_, _| 0.5);
                    slots += 1;
                    assert!(slots < 2_000_000, "ordering stuck at n={n} seed={seed}");
                }
                let mut orders: Vec<usize> =
                    agents.iter().map(|a| a.order_index().unwrap()).collect();
                orders.sort_unstable();
                assert_eq!(orders, (0..n).collect::<Vec<_>>(), "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn ordering_contended_first_slot_recovers() {
        // find a seed pair where both agents probe arm 0 in the first slot,
        // exercising the collided-probe and echo paths
        let cfg = ProtocolConfig::new(2);
        let mut found = false;
        for seed in 0..200u64 {
            let mut agents: Vec<Agent> = (0..2)
                .map(|i| Agent::new(cfg.clone(), stream_rng(seed, Stream::Agent(i))))
                .collect();
            let arms = drive_slot(&mut agents, |_, _| 0.5);
            if arms[0] == arms[1] {
                found = true;
                let mut slots = 1u64;
                while agents.iter().any(|a| a.phase_kind() == PhaseKind::Ordering) {
                    drive_slot(&mut agents, |_, _| 0.5);
                    slots += 1;
                    assert!(slots < 100_000);
                }
                let mut orders: Vec<usize> =
                    agents.iter().map(|a| a.order_index().unwrap()).collect();
                orders.sort_unstable();
                assert_eq!(orders, vec![0, 1]);
                break;
            }
        }
        assert!(found, "no seed produced a first-slot collision");
    }

    #[test]
    fn exploration_is_collision_free_and_counts_exactly() {
        let n = 3;
        let cfg = ProtocolConfig::new(n);
        let l = cfg.exploration_scale;
        let mut agents: Vec<Agent> = (0..n).map(|i| Agent::with_order(cfg.clone(), i)).collect();
        let means = [[0.3, 0.6, 0.9], [0.9, 0.3, 0.6], [0.6, 0.9, 0.3]];
        let mut slots = 0u64;
        while agents[0].phase_kind() == PhaseKind::Exploration {
            let kinds: Vec<SlotKind> = agents.iter().map(|a| a.slot_kind()).collect();
            let arms = drive_slot(&mut agents, |i, arm| means[i][arm]);
            if kinds[0] == SlotKind::ExploreSample {
                let mut seen = [false; 3];
                for &arm in &arms {
                    assert!(!seen[arm], "collision during sampling");
                    seen[arm] = true;
                }
            }
            slots += 1;
            assert!(slots < 1_000_000);
        }
        // epoch 1: b_hat starts at 0, so the per-arm target is exactly L
        for a in &agents {
            assert_eq!(a.phase_kind(), PhaseKind::Matching);
            for e in a.estimates() {
                assert_eq!(e.visit_count, l);
            }
        }
        // n*L sampling slots plus one n-slot window per L samples
        assert_eq!(slots, n as u64 * l + (n as u64 * l / l) * n as u64);
    }

    #[test]
    fn matching_settles_latin_square_to_known_bracket() {
        let rows = vec![
            vec![0.1, 0.5, 0.9],
            vec![0.9, 0.1, 0.5],
            vec![0.5, 0.9, 0.1],
        ];
        let cfg = ProtocolConfig::new(3);
        let out = simulate_matching(&rows, &cfg);
        // threshold trace: 1 infeasible, then 0.5, 0.75, 0.875 feasible,
        // 0.9375 infeasible, and 0.0625 < delta_hat/4 = 0.1 stops
        assert_eq!(out.threshold_tests, 5);
        assert!((out.tau_min - 0.875).abs() < 1e-12);
        assert!((out.tau_max - 0.9375).abs() < 1e-12);
        assert!(!out.fallback);
        assert_eq!(out.assignment, vec![2, 0, 1]);
    }

    #[test]
    fn matching_respects_threshold_budget() {
        let mut rng = stream_rng(5, Stream::ModelGen);
        for n in [2usize, 4, 6] {
            for _ in 0..25 {
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect())
                    .collect();
                let cfg = ProtocolConfig::new(n);
                let out = simulate_matching(&rows, &cfg);
                let b: f64 = 1.0; // estimates live in (0, 1)
                let delta = rows
                    .iter()
                    .map(|r| crate::oracle::row_gap(r).unwrap())
                    .fold(f64::INFINITY, f64::min);
                if delta <= 0.0 {
                    continue;
                }
                let budget = (2.0 * b).log2().ceil() + (4.0 * b / delta).log2().ceil() + 1.0;
                assert!(
                    out.threshold_tests as f64 <= budget,
                    "tests={} budget={budget} n={n}",
                    out.threshold_tests
                );
            }
        }
    }

    #[test]
    fn matching_with_all_estimates_below_everything_falls_back() {
        // equal rows: zero gap; bisection collapses to the width floor and
        // the group settles on a feasible low threshold
        let rows = vec![vec![0.4, 0.4], vec![0.4, 0.4]];
        let cfg = ProtocolConfig::new(2);
        let out = simulate_matching(&rows, &cfg);
        assert!(!out.fallback); // tau = 0.2-ish is feasible: both rows clear it
        assert!(out.tau_min > 0.0);
        assert!(out.tau_max - out.tau_min < 1e-9);
        let mut arms = out.assignment.clone();
        arms.sort_unstable();
        assert_eq!(arms, vec![0, 1]);
    }

    #[test]
    fn single_agent_matching_degenerates_to_fallback() {
        let cfg = ProtocolConfig::new(1);
        let out = simulate_matching(&[vec![0.7]], &cfg);
        assert!(out.fallback);
        assert_eq!(out.assignment, vec![0]);
        assert_eq!(out.threshold_tests, 1);
    }

    #[test]
    fn exploitation_epoch_ends_synchronized() {
        let n = 2;
        let cfg = ProtocolConfig::new(n);
        let rows = vec![vec![0.9, 0.2], vec![0.3, 0.8]];
        let mut agents: Vec<Agent> = (0..n)
            .map(|i| {
                let mut a = Agent::with_order(cfg.clone(), i);
                for (arm, &m) in rows[i].iter().enumerate() {
                    a.estimates[arm] = ArmEstimate {
                        mean_estimate: m,
                        visit_count: 1,
                        max_sample: m,
                    };
                }
                a.enter_matching();
                a
            })
            .collect();
        while agents.iter().any(|a| a.phase_kind() == PhaseKind::Matching) {
            drive_slot(&mut agents, |_, _| 0.5);
        }
        assert_eq!(agents[0].epoch(), 1);
        let mut exploit_slots = 0u64;
        while agents
            .iter()
            .any(|a| a.phase_kind() == PhaseKind::Exploitation)
        {
            assert!(
                agents
                    .iter()
                    .all(|a| a.phase_kind() == PhaseKind::Exploitation),
                "epoch exit desynchronized"
            );
            drive_slot(&mut agents, |i, arm| rows[i][arm]);
            exploit_slots += 1;
            assert!(exploit_slots < 1_000_000);
        }
        assert!(agents.iter().all(|a| a.epoch() == 2));
        // both gaps saturate the base at 2, so both targets are 2 slots:
        // one aligned period plus the n-slot sweep window
        assert_eq!(exploit_slots, 2 * n as u64);
    }
}
