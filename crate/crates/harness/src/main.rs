//! Command-line front end: single runs, Monte-Carlo sweeps, offline
//! re-aggregation, and the centralized reference solver.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairband_core::oracle::BRUTEFORCE_MAX;
use fairband_core::{
    maxmin_bruteforce, maxmin_exact, min_gap, run_simulation, C1Variant, CheckpointMode,
    RewardKind, RewardSpec, SimulationConfig, SquareMatrix,
};
use fairband_harness::emit::{rows_from_result, run_csv_bytes};
use fairband_harness::run::reaggregate;
use fairband_harness::{run_monte_carlo, write_if_changed, ExperimentSpec, Manifest, SweepOutcome};

/// Overrides the built-in default output directory for sweeps and reports.
const OUT_DIR_ENV: &str = "FAIRBAND_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "fairband",
    version,
    about = "Collision-channel max-min bandit simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write its checkpoint trace as CSV.
    Run(RunCmd),
    /// Run a Monte-Carlo sweep over seeds and agent counts.
    Sweep(SweepCmd),
    /// Recompute aggregate artifacts from per-run CSVs already on disk.
    Report(ReportCmd),
    /// Solve a mean matrix exactly: benchmark value, assignment, min gap.
    Oracle(OracleCmd),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeneratorArg {
    /// Latin square over 1/n..1; benchmark is exactly 1.
    Latin,
    /// All of 1/n^2..1 shuffled; benchmark varies by seed.
    Grid,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    /// Uniform on (0, 2*mean].
    Uniform,
    /// Triangular on (0, 1.5*mean] with the mode at the top.
    Triangular,
}

impl From<KindArg> for RewardKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Uniform => RewardKind::Uniform,
            KindArg::Triangular => RewardKind::TriangularPeak,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum C1Arg {
    /// Exploration target ceil(L*b^2 + L).
    Quadratic,
    /// Exploration target ceil(b*n) + 1.
    Linear,
}

impl From<C1Arg> for C1Variant {
    fn from(v: C1Arg) -> Self {
        match v {
            C1Arg::Quadratic => C1Variant::Quadratic,
            C1Arg::Linear => C1Variant::LinearPlusOne,
        }
    }
}

/// Model and protocol knobs shared by `run` and `sweep`. Every flag is
/// optional; unset flags keep the defaults or, for `sweep --config`, the
/// values from the config file.
#[derive(Args)]
struct ModelArgs {
    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Agent (and arm) count.
    #[arg(long)]
    agents: Option<usize>,
    /// Built-in mean-matrix generator.
    #[arg(long, value_enum)]
    generator: Option<GeneratorArg>,
    /// Reward distribution family.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// CSV file with an explicit mean matrix instead of a generator.
    #[arg(long, conflicts_with_all = ["generator", "agents"])]
    matrix: Option<PathBuf>,
    /// Epochs each run must complete.
    #[arg(long)]
    epochs: Option<u32>,
    /// Hard slot cap on top of the epoch budget.
    #[arg(long)]
    max_slots: Option<u64>,
    /// Sample-budget scale L.
    #[arg(long)]
    scale: Option<u64>,
    /// Ordering round length multiplier.
    #[arg(long)]
    beta: Option<f64>,
    /// Divisor in the exploitation-base exponent.
    #[arg(long)]
    c3_divisor: Option<f64>,
    /// Exploration target schedule.
    #[arg(long, value_enum)]
    c1: Option<C1Arg>,
    /// Checkpoint every K slots instead of at powers of two.
    #[arg(long, value_name = "K")]
    stride: Option<u64>,
    /// Hand agents their order indices instead of running the ordering
    /// phase.
    #[arg(long)]
    skip_ordering: bool,
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// Output CSV file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing output file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// Experiment spec as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Runs per agent count.
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated agent counts to sweep, e.g. 2,4,8,16.
    #[arg(long, value_name = "N,N,..")]
    agents_list: Option<String>,
    /// Output directory (default: $FAIRBAND_OUT_DIR or ./fairband-out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Replace artifacts from a different experiment in the same
    /// directory.
    #[arg(long)]
    force: bool,
    /// Worker threads for simulation (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportCmd {
    /// Directory holding manifest.json and the per-run CSVs
    /// (default: $FAIRBAND_OUT_DIR or ./fairband-out).
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Replace aggregate artifacts that no longer match.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct OracleCmd {
    /// CSV file with the mean matrix; `#` starts a comment line.
    #[arg(long)]
    matrix: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; only real usage errors
            // are config errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(cmd) => cmd_run(cmd),
        Command::Sweep(cmd) => cmd_sweep(cmd),
        Command::Report(cmd) => cmd_report(cmd),
        Command::Oracle(cmd) => cmd_oracle(cmd),
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fairband-out"))
}

/// CLI defaults for a fresh config: ten agents on a latin square, the
/// standard epoch budget, sparse checkpoints.
fn default_config() -> SimulationConfig {
    SimulationConfig::new(
        0,
        RewardSpec::Latin {
            n: 10,
            kind: RewardKind::Uniform,
        },
        256,
    )
}

/// Lay the set flags over `cfg`, leaving everything else alone.
fn apply_model_args(cfg: &mut SimulationConfig, args: &ModelArgs) -> Result<()> {
    if let Some(path) = &args.matrix {
        let rows = parse_matrix_file(path)?;
        let kind = args
            .kind
            .map(RewardKind::from)
            .unwrap_or_else(|| current_kind(&cfg.reward));
        cfg.reward = RewardSpec::Explicit { rows, kind };
    } else if args.generator.is_some() || args.agents.is_some() || args.kind.is_some() {
        let n = args.agents.unwrap_or_else(|| cfg.reward.n_arms());
        let kind = args
            .kind
            .map(RewardKind::from)
            .unwrap_or_else(|| current_kind(&cfg.reward));
        cfg.reward = match (args.generator, &cfg.reward) {
            (Some(GeneratorArg::Latin), _) | (None, RewardSpec::Latin { .. }) => {
                RewardSpec::Latin { n, kind }
            }
            (Some(GeneratorArg::Grid), _) | (None, RewardSpec::Grid { .. }) => {
                RewardSpec::Grid { n, kind }
            }
            (None, RewardSpec::Explicit { rows, .. }) => {
                if rows.len() != n {
                    bail!(
                        "--agents {n} conflicts with the configured {0}x{0} matrix",
                        rows.len()
                    );
                }
                RewardSpec::Explicit {
                    rows: rows.clone(),
                    kind,
                }
            }
        };
    }
    let n = cfg.reward.n_arms();
    if cfg.protocol.n_agents != n {
        let mut protocol = fairband_core::ProtocolConfig::new(n);
        protocol.exploration_scale = cfg.protocol.exploration_scale;
        protocol.ordering_beta = cfg.protocol.ordering_beta;
        protocol.c3_divisor = cfg.protocol.c3_divisor;
        protocol.c1_variant = cfg.protocol.c1_variant;
        cfg.protocol = protocol;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if args.max_slots.is_some() {
        cfg.max_slots = args.max_slots;
    }
    if let Some(scale) = args.scale {
        cfg.protocol.exploration_scale = scale;
    }
    if let Some(beta) = args.beta {
        cfg.protocol.ordering_beta = beta;
    }
    if let Some(d) = args.c3_divisor {
        cfg.protocol.c3_divisor = d;
    }
    if let Some(c1) = args.c1 {
        cfg.protocol.c1_variant = c1.into();
    }
    if let Some(k) = args.stride {
        cfg.checkpoints = CheckpointMode::Stride(k);
    }
    if args.skip_ordering {
        cfg.skip_ordering = true;
    }
    Ok(())
}

fn current_kind(reward: &RewardSpec) -> RewardKind {
    match reward {
        RewardSpec::Explicit { kind, .. }
        | RewardSpec::Latin { kind, .. }
        | RewardSpec::Grid { kind, .. } => *kind,
    }
}

fn cmd_run(cmd: RunCmd) -> Result<ExitCode> {
    let mut cfg = default_config();
    apply_model_args(&mut cfg, &cmd.model)?;
    let result = run_simulation(&cfg)?;
    let rows = rows_from_result(&result);
    let bytes = run_csv_bytes(&rows);
    match &cmd.out {
        Some(path) => {
            write_if_changed(path, &bytes, cmd.force)?;
        }
        None => print!("{}", String::from_utf8(bytes).expect("csv is utf-8")),
    }
    eprintln!(
        "n={} rho_star={:.6} slots={} cum_regret={:.4} epochs={} collision_slots={}",
        cfg.reward.n_arms(),
        result.rho_star,
        result.slots,
        result.cum_regret,
        result.epochs_completed,
        result.collision_slots,
    );
    Ok(ExitCode::SUCCESS)
}

fn build_sweep_spec(cmd: &SweepCmd) -> Result<ExperimentSpec> {
    let mut spec = match &cmd.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentSpec::new(default_config(), 100, default_out_dir()),
    };
    apply_model_args(&mut spec.base, &cmd.model)?;
    if let Some(runs) = cmd.runs {
        spec.n_runs = runs;
    }
    if let Some(list) = &cmd.agents_list {
        spec.n_agents = list
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing agent list {list:?}"))?;
    }
    if let Some(dir) = &cmd.out_dir {
        spec.out_dir = dir.clone();
    }
    Ok(spec)
}

fn print_sweep_summary(outcome: &SweepOutcome, out_dir: &Path) {
    for s in &outcome.report.per_n {
        let mut line = format!(
            "n={} runs={} failed={} final_T={} median_regret={:.4}",
            s.n,
            s.completed_runs,
            s.failed_runs.len(),
            s.final_t_median,
            s.final_regret_median,
        );
        if let (Some(fit), Some((lo, hi))) = (&s.fit, s.fit_window) {
            let _ = write!(
                line,
                " fit[epochs {lo}..{hi}]: slope={:.4} r2={:.4}",
                fit.slope, fit.r_squared
            );
        }
        println!("{line}");
    }
    for f in &outcome.failures {
        eprintln!("failed: n={} run={}: {}", f.n, f.run_index, f.message);
    }
    println!("artifacts in {}", out_dir.display());
}

fn cmd_sweep(cmd: SweepCmd) -> Result<ExitCode> {
    let spec = build_sweep_spec(&cmd)?;
    let outcome = run_monte_carlo(&spec, cmd.force, cmd.workers)?;
    print_sweep_summary(&outcome, &spec.out_dir);
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_report(cmd: ReportCmd) -> Result<ExitCode> {
    let dir = cmd.dir.unwrap_or_else(default_out_dir);
    let manifest = Manifest::load(&fairband_harness::emit::manifest_path(&dir))?;
    let outcome = reaggregate(&manifest.spec, &dir, cmd.force)?;
    print_sweep_summary(&outcome, &dir);
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_oracle(cmd: OracleCmd) -> Result<ExitCode> {
    let rows = parse_matrix_file(&cmd.matrix)?;
    let matrix = SquareMatrix::from_rows(&rows)?;
    let solution = if matrix.n() <= BRUTEFORCE_MAX {
        maxmin_bruteforce(&matrix)?
    } else {
        maxmin_exact(&matrix)
    };
    let assignment = solution
        .assignment
        .iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    println!("rho_star = {}", solution.value);
    println!("assignment = {assignment}");
    println!("min_gap = {}", min_gap(&matrix)?);
    Ok(ExitCode::SUCCESS)
}

/// Rows of comma- or whitespace-separated means; blank lines and `#`
/// comments are skipped.
fn parse_matrix_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .with_context(|| format!("{}:{}: bad entry", path.display(), i + 1))?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no matrix rows", path.display());
    }
    Ok(rows)
}
