//! Reproduction driver: every table and simulation is a subcommand that emits
//! CSV (header row) or JSON.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 on numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prophet_oracle::dpopt::{self, Discrepancy, DpInputs, Grid};
use prophet_oracle::engine::{
    self, Model, Objective, OracleSemantics, OracleStrategy, Ordering, QuerySet, RunningMaxima,
    SelectAll, SelectPositions, SimReport, SingleThreshold, Strategy,
};
use prophet_oracle::instances::{self, FamilyParams, Instance};
use prophet_oracle::mathkit::{self, ExponentEntry};
use prophet_oracle::{DpError, EngineError, InstanceError, MathError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

impl From<MathError> for CliError {
    fn from(e: MathError) -> Self {
        match e {
            MathError::Domain(m) => CliError::Input(m),
            MathError::Numerical(m) => CliError::Numerical(m),
        }
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        match e {
            InstanceError::Math(m) => m.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Math(m) => m.into(),
            EngineError::Instance(i) => i.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<DpError> for CliError {
    fn from(e: DpError) -> Self {
        match e {
            DpError::Math(m) => m.into(),
            DpError::Instance(i) => i.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

/// A number, or `auto` for the canonical choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto {
    Auto,
    Value(f64),
}

impl FromStr for Auto {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" | "quantile" => Ok(Auto::Auto),
            _ => s
                .parse::<f64>()
                .map(Auto::Value)
                .map_err(|_| format!("expected a number or `auto`, got `{s}`")),
        }
    }
}

impl fmt::Display for Auto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Semantics {
    Strict,
    Weak,
}

impl From<Semantics> for OracleSemantics {
    fn from(s: Semantics) -> Self {
        match s {
            Semantics::Strict => OracleSemantics::Strict,
            Semantics::Weak => OracleSemantics::Weak,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builder {
    Gap,
    Tightness,
    Appendix,
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderingArg {
    Natural,
    StackNonzeros,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    /// Rising-bar threshold; `--tau` or `--tau quantile`.
    SingleThreshold,
    /// Query nonzero values at `--positions` (default 1..=m).
    QuerySet,
    /// Threshold at `P[X > tau] = q / n` on iid uniforms.
    IidPbm,
    /// Keep the first value and the last if nonzero (`--k` slots).
    Top1SelectFirstAndLast,
    /// Keep every running maximum above `--tau` (`--k` slots).
    Top1RunningMaxima,
    /// Keep the first `--k` values.
    Top1SelectAll,
    /// The single-threshold rule, run through the oracle-to-Top-1 wrapper.
    Top1WrappedThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableKind {
    Compratio,
    Discrepancy,
}

#[derive(Debug, Parser)]
#[command(name = "prophet-oracle", version, about = "Prophet inequalities with a maximum oracle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads for simulations and grid searches.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exponent table: m, xi_m, 1 - e^{-xi_m}, bracket, Psi_m.
    Xi {
        #[arg(long, default_value_t = 15)]
        m_max: usize,
    },
    /// Monte Carlo of a strategy on an instance file or a builder.
    Simulate(SimulateArgs),
    /// Probability of picking the maximum of n iid uniforms with m queries.
    Pbm(PbmArgs),
    /// Optimal DP ratio, best single threshold, and the discrepancy.
    Dp(DpArgs),
    /// Full tables.
    Table(TableArgs),
    /// Exact values on the small gap instance.
    Gap(GapArgs),
    /// Write a built instance as JSON.
    Build(InstanceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Instance JSON file; overrides `--builder`.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Builder::Gap)]
    pub builder: Builder,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Middle variables (tightness, appendix) or draws (iid). Default 2000.
    #[arg(long)]
    pub n: Option<usize>,
    /// Tail probability. Default 0.01 (1e-3 for tightness).
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value = "auto")]
    pub c1: Auto,
    #[arg(long, default_value = "auto")]
    pub c2: Auto,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, value_enum, default_value_t = StrategyArg::SingleThreshold)]
    pub strategy: StrategyArg,
    /// Threshold, or `quantile` for the e^{-xi_m} quantile of the maximum.
    #[arg(long, default_value = "quantile")]
    pub tau: Auto,
    /// 0-based query positions for `query-set`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub positions: Option<Vec<usize>>,
    /// Expected number of draws above the iid threshold; `auto` = e^{sqrt(m)}.
    #[arg(long, default_value = "auto")]
    pub q: Auto,
    /// Slots for Top-1 strategies. Default m + 1.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = Semantics::Strict)]
    pub oracle: Semantics,
    #[arg(long, value_enum, default_value_t = OrderingArg::Natural)]
    pub ordering: OrderingArg,
    /// Permutation for `--ordering explicit`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub perm: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    /// Master seed; drawn from entropy and echoed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PbmArgs {
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Expected draws above the threshold; `auto` = e^{sqrt(m)}.
    #[arg(long, default_value = "2.435")]
    pub q: Auto,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Semantics::Strict)]
    pub oracle: Semantics,
}

#[derive(Debug, Clone, Args)]
pub struct DpArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub eps: f64,
    #[arg(long, default_value = "auto")]
    pub c1: Auto,
    #[arg(long, default_value = "auto")]
    pub c2: Auto,
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    #[arg(value_enum)]
    pub which: TableKind,
    /// Largest budget. Default 15 (compratio) or 11 (discrepancy).
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c1_min: f64,
    #[arg(long, default_value_t = 8.0)]
    pub c1_max: f64,
    #[arg(long, default_value_t = 76)]
    pub c1_steps: usize,
    #[arg(long, default_value_t = 0.4)]
    pub c2_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c2_max: f64,
    #[arg(long, default_value_t = 61)]
    pub c2_steps: usize,
    /// Skip the 10x refinement around the coarse argmin.
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GapArgs {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = Semantics::Strict)]
    pub oracle: Semantics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompratioRow {
    pub m: usize,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PbmRow {
    pub n: usize,
    pub q: f64,
    pub m: usize,
    pub tau: f64,
    pub trials: u64,
    pub seed: u64,
    pub pbm_estimate: f64,
    pub stderr_pbm: f64,
    pub failure_estimate: f64,
    /// Closed-form bound; only defined for a single query.
    pub formula_lower_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpRow {
    pub m: usize,
    pub n: usize,
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub expected_max: f64,
    pub opt_value: f64,
    pub opt_ratio: f64,
    pub best_threshold_index: usize,
    pub single_threshold_ratio: f64,
    pub target: f64,
    /// `opt_ratio - target`.
    pub difference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub m: usize,
    pub eps: f64,
    pub expected_max: f64,
    /// Query `X_1`..`X_m`, accept on YES, else take the tail.
    pub oracle_reference_value: f64,
    pub oracle_optimal_value: f64,
    pub top1_optimal_value: f64,
    pub oracle_reference_ratio: f64,
    pub oracle_optimal_ratio: f64,
    pub top1_ratio: f64,
    /// `oracle_reference_ratio / top1_ratio`.
    pub reference_quotient: f64,
    /// `oracle_optimal_ratio / top1_ratio`.
    pub optimal_quotient: f64,
}

fn resolve_pair(m: usize, c1: Auto, c2: Auto) -> Result<(f64, f64), CliError> {
    let e = mathkit::exponent(m)?;
    let pick = |a: Auto, auto: f64| match a {
        Auto::Auto => auto,
        Auto::Value(v) => v,
    };
    Ok((pick(c1, e.xi), pick(c2, e.psi)))
}

pub fn build_instance(args: &InstanceArgs) -> Result<Instance, CliError> {
    if let Some(path) = &args.instance {
        return Ok(Instance::load(path)?);
    }
    let n = args.n.unwrap_or(2000);
    Ok(match args.builder {
        Builder::Gap => instances::build_gap_instance(args.m, args.eps.unwrap_or(0.01))?,
        Builder::Tightness => {
            instances::build_tightness_instance(args.m, n, args.eps.unwrap_or(1e-3))?
        }
        Builder::Appendix => {
            let (c1, c2) = resolve_pair(args.m, args.c1, args.c2)?;
            let params = FamilyParams::new(args.m, n, args.eps.unwrap_or(0.01), c1, c2);
            instances::build_appendix_instance(&params, params.default_value_step())?
        }
        Builder::Iid => Instance::IidUniform(n),
    })
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

pub fn cmd_xi(m_max: usize) -> Result<Vec<ExponentEntry>, CliError> {
    if m_max < 1 {
        return Err(CliError::Input("--m-max must be >= 1".into()));
    }
    (1..=m_max).map(|m| Ok(mathkit::exponent(m)?)).collect()
}

/// The strategy and the budget (queries or slots) it runs with.
pub fn make_strategy(
    args: &SimulateArgs,
    instance: &Instance,
) -> Result<(Strategy, usize), CliError> {
    let m = args.instance.m;
    let k = args.k.unwrap_or(m + 1);
    if k == 0 {
        return Err(CliError::Input("--k must be >= 1".into()));
    }
    let tau = || -> Result<f64, CliError> {
        match args.tau {
            Auto::Value(t) => Ok(t),
            Auto::Auto => Ok(engine::quantile_threshold(instance, m)?),
        }
    };
    let threshold = || -> Result<SingleThreshold, CliError> { Ok(SingleThreshold::new(tau()?)?) };
    Ok(match args.strategy {
        StrategyArg::SingleThreshold => (Strategy::oracle(threshold()?), m),
        StrategyArg::QuerySet => {
            let positions = args.positions.clone().unwrap_or_else(|| (1..=m).collect());
            if positions.len() > m {
                return Err(CliError::Input(format!(
                    "{} query positions exceed the budget m = {m}",
                    positions.len()
                )));
            }
            (Strategy::oracle(QuerySet::new(positions)), m)
        }
        StrategyArg::IidPbm => {
            let q = match args.q {
                Auto::Auto => (m as f64).sqrt().exp(),
                Auto::Value(q) => q,
            };
            (Strategy::oracle(engine::iid_pbm_strategy(q, instance.len())?), m)
        }
        StrategyArg::Top1SelectFirstAndLast => (
            Strategy::top1(SelectPositions::first_and_last(instance.len())),
            k,
        ),
        StrategyArg::Top1RunningMaxima => {
            let threshold = match args.tau {
                Auto::Value(t) => t,
                Auto::Auto => f64::NEG_INFINITY,
            };
            (Strategy::top1(RunningMaxima { threshold }), k)
        }
        StrategyArg::Top1SelectAll => (Strategy::top1(SelectAll), k),
        StrategyArg::Top1WrappedThreshold => {
            let inner: Arc<dyn OracleStrategy> = Arc::new(threshold()?);
            (
                Strategy::top1(engine::WrapOracleAsTop1::new(inner, m)),
                m + 1,
            )
        }
    })
}

fn make_ordering(args: &SimulateArgs) -> Result<Ordering, CliError> {
    Ok(match args.ordering {
        OrderingArg::Natural => Ordering::Natural,
        OrderingArg::StackNonzeros => Ordering::StackNonzeros,
        OrderingArg::Explicit => Ordering::Explicit(
            args.perm
                .clone()
                .ok_or_else(|| CliError::Input("--ordering explicit needs --perm".into()))?,
        ),
    })
}

pub fn cmd_simulate(args: &SimulateArgs, workers: usize) -> Result<SimReport, CliError> {
    let instance = build_instance(&args.instance)?;
    let (strategy, budget) = make_strategy(args, &instance)?;
    let ordering = make_ordering(args)?;
    Ok(engine::monte_carlo(
        &instance,
        &ordering,
        &strategy,
        budget,
        args.oracle.into(),
        args.trials,
        seed_or_entropy(args.seed),
        workers,
    )?)
}

pub fn cmd_pbm(args: &PbmArgs, workers: usize) -> Result<PbmRow, CliError> {
    if args.m < 1 {
        return Err(CliError::Input("--m must be >= 1 for the oracle model".into()));
    }
    let q = match args.q {
        Auto::Auto => (args.m as f64).sqrt().exp(),
        Auto::Value(q) => q,
    };
    if !(q > 0.0 && q < args.n as f64) {
        return Err(CliError::Input(format!("need 0 < q < n, got q = {q}, n = {}", args.n)));
    }
    let strategy = engine::iid_pbm_strategy(q, args.n)?;
    let tau = strategy.tau;
    let seed = seed_or_entropy(args.seed);
    let rep = engine::monte_carlo(
        &Instance::IidUniform(args.n),
        &Ordering::Natural,
        &Strategy::oracle(strategy),
        args.m,
        args.oracle.into(),
        args.trials,
        seed,
        workers,
    )?;
    let formula_lower_bound = if args.m == 1 && args.n >= 2 {
        Some(mathkit::pbm_lower_bound(q, args.n)?)
    } else {
        None
    };
    Ok(PbmRow {
        n: args.n,
        q,
        m: args.m,
        tau,
        trials: rep.trials,
        seed,
        pbm_estimate: rep.pbm_estimate,
        stderr_pbm: rep.stderr_pbm,
        failure_estimate: 1.0 - rep.pbm_estimate,
        formula_lower_bound,
    })
}

pub fn cmd_dp(args: &DpArgs) -> Result<DpRow, CliError> {
    let (c1, c2) = resolve_pair(args.m, args.c1, args.c2)?;
    let params = FamilyParams::new(args.m, args.n, args.eps, c1, c2);
    let step = params.default_value_step();
    let expected_max = dpopt::family_expected_max_with_step(&params, step)?;
    let opt_value = dpopt::dp_value(&DpInputs::from_family(&params, step)?)?;
    let (best_threshold_index, _, single_threshold_ratio) = dpopt::best_single_threshold(&params)?;
    let target = mathkit::exponent(args.m)?.target;
    let opt_ratio = opt_value / expected_max;
    Ok(DpRow {
        m: args.m,
        n: args.n,
        eps: args.eps,
        c1,
        c2,
        expected_max,
        opt_value,
        opt_ratio,
        best_threshold_index,
        single_threshold_ratio,
        target,
        difference: opt_ratio - target,
    })
}

pub fn cmd_compratio(m_max: usize) -> Result<Vec<CompratioRow>, CliError> {
    Ok(cmd_xi(m_max)?
        .into_iter()
        .map(|e| CompratioRow {
            m: e.m,
            target: e.target,
        })
        .collect())
}

pub fn table_grid(args: &TableArgs) -> Grid {
    Grid {
        c1_range: (args.c1_min, args.c1_max),
        c2_range: (args.c2_min, args.c2_max),
        c1_steps: args.c1_steps,
        c2_steps: args.c2_steps,
        refine: !args.no_refine,
    }
}

pub fn cmd_discrepancy(
    m_max: usize,
    n: usize,
    eps: f64,
    grid: &Grid,
    workers: usize,
) -> Result<Vec<Discrepancy>, CliError> {
    if m_max < 1 {
        return Err(CliError::Input("--m-max must be >= 1".into()));
    }
    (1..=m_max)
        .map(|m| Ok(dpopt::discrepancy(m, n, eps, grid, workers)?))
        .collect()
}

pub fn cmd_gap(args: &GapArgs) -> Result<GapRow, CliError> {
    if args.m > 3 {
        return Err(CliError::Input(format!(
            "exact search supports m <= 3, got {}",
            args.m
        )));
    }
    if args.m < 1 {
        return Err(CliError::Input("--m must be >= 1".into()));
    }
    let inst = instances::build_gap_instance(args.m, args.eps)?;
    let sem: OracleSemantics = args.oracle.into();
    let order = Ordering::Natural;
    let expected_max = inst.expected_max()?;
    let reference = Strategy::oracle(QuerySet::new(0..args.m));
    let oracle_reference_value =
        engine::exact_strategy_value(&inst, &order, &reference, args.m, sem, Objective::RoE)?;
    let oracle_optimal_value = engine::exact_optimal(
        &inst,
        &order,
        Model::Oracle { budget: args.m },
        Objective::RoE,
        sem,
    )?;
    let top1_optimal_value = engine::exact_optimal(
        &inst,
        &order,
        Model::Top1 {
            capacity: args.m + 1,
        },
        Objective::RoE,
        sem,
    )?;
    let top1_ratio = top1_optimal_value / expected_max;
    let oracle_reference_ratio = oracle_reference_value / expected_max;
    let oracle_optimal_ratio = oracle_optimal_value / expected_max;
    Ok(GapRow {
        m: args.m,
        eps: args.eps,
        expected_max,
        oracle_reference_value,
        oracle_optimal_value,
        top1_optimal_value,
        oracle_reference_ratio,
        oracle_optimal_ratio,
        top1_ratio,
        reference_quotient: oracle_reference_ratio / top1_ratio,
        optimal_quotient: oracle_optimal_ratio / top1_ratio,
    })
}

fn write_rows<T: Serialize>(
    rows: &[T],
    single: bool,
    format: Format,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            if single && rows.len() == 1 {
                serde_json::to_writer_pretty(&mut *out, &rows[0])?;
            } else {
                serde_json::to_writer_pretty(&mut *out, rows)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Run a parsed command line, writing its result to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let (format, workers) = (cli.format, cli.workers);
    if workers == 0 {
        return Err(CliError::Input("--workers must be >= 1".into()));
    }
    match &cli.command {
        Command::Xi { m_max } => write_rows(&cmd_xi(*m_max)?, false, format, out),
        Command::Simulate(args) => write_rows(&[cmd_simulate(args, workers)?], true, format, out),
        Command::Pbm(args) => write_rows(&[cmd_pbm(args, workers)?], true, format, out),
        Command::Dp(args) => write_rows(&[cmd_dp(args)?], true, format, out),
        Command::Gap(args) => write_rows(&[cmd_gap(args)?], true, format, out),
        Command::Table(args) => match args.which {
            TableKind::Compratio => {
                write_rows(&cmd_compratio(args.m_max.unwrap_or(15))?, false, format, out)
            }
            TableKind::Discrepancy => {
                let rows = cmd_discrepancy(
                    args.m_max.unwrap_or(11),
                    args.n,
                    args.eps,
                    &table_grid(args),
                    workers,
                )?;
                write_rows(&rows, false, format, out)
            }
        },
        Command::Build(args) => {
            let json = build_instance(args)?.to_json()?;
            writeln!(out, "{json}")?;
            Ok(())
        }
    }
}
