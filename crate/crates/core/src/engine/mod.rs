//! Sequential decisions against a realized sequence.
//!
//! Two models share one loop shape. In the oracle model the gambler may ask,
//! a limited number of times, whether the value in hand beats everything still
//! to come, and keeps at most one value. In the Top-1-of-k model it may keep up
//! to `k` values and is paid the largest.
//!
//! Strategies are immutable descriptions; each episode gets a fresh agent from
//! [`OracleStrategy::start`] or [`SelectionStrategy::start`]. Positions are
//! 0-based throughout.

mod exact;
mod montecarlo;
mod strategies;

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::instances::{Instance, Sampler};
use crate::mathkit;

pub use exact::{exact_optimal, exact_strategy_value, EXACT_MAX_OUTCOMES};
pub use montecarlo::{monte_carlo, trial_rng, SimReport, MC_BLOCK};
pub use strategies::{
    general_m_pbm_strategy, iid_pbm_strategy, RunningMaxima, SelectAll, SelectNone,
    SelectPositions, QuerySet, SingleThreshold, WrapOracleAsTop1, WrapTop1AsOracle,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleSemantics {
    /// YES iff the current value is strictly above every remaining value.
    Strict,
    /// YES iff no remaining value is larger.
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    /// Expected payoff.
    RoE,
    /// Probability that the kept value is the realized maximum.
    PbM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Oracle { budget: usize },
    Top1 { capacity: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Skip,
    Query,
    Accept,
}

/// What an agent sees at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub position: usize,
    pub len: usize,
    pub value: f64,
    /// Remaining queries (oracle model) or remaining capacity (Top-1).
    pub budget: usize,
}

impl Observation {
    pub fn is_last(&self) -> bool {
        self.position + 1 == self.len
    }
}

pub trait OracleAgent {
    fn act(&mut self, obs: &Observation) -> Action;

    /// Called after a query at `obs`; must return `Accept` or `Skip`.
    fn on_answer(&mut self, obs: &Observation, yes: bool) -> Action;

    /// Values at or below this level are skipped without consulting the agent.
    fn pass_level(&self) -> f64 {
        f64::NEG_INFINITY
    }
}

pub trait OracleStrategy: Debug + Send + Sync {
    fn start(&self, len: usize, budget: usize) -> Box<dyn OracleAgent + '_>;

    /// Threshold defining the `Y`/`M` episode statistics, if the strategy has one.
    fn trigger_threshold(&self) -> Option<f64> {
        None
    }
}

pub trait SelectionAgent {
    fn offer(&mut self, obs: &Observation) -> bool;

    fn pass_level(&self) -> f64 {
        f64::NEG_INFINITY
    }
}

pub trait SelectionStrategy: Debug + Send + Sync {
    fn start(&self, len: usize, capacity: usize) -> Box<dyn SelectionAgent + '_>;

    fn trigger_threshold(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone)]
pub enum Strategy {
    Oracle(Arc<dyn OracleStrategy>),
    Top1(Arc<dyn SelectionStrategy>),
}

impl Strategy {
    pub fn oracle(s: impl OracleStrategy + 'static) -> Self {
        Strategy::Oracle(Arc::new(s))
    }

    pub fn top1(s: impl SelectionStrategy + 'static) -> Self {
        Strategy::Top1(Arc::new(s))
    }

    fn trigger_threshold(&self) -> Option<f64> {
        match self {
            Strategy::Oracle(s) => s.trigger_threshold(),
            Strategy::Top1(s) => s.trigger_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub payoff: f64,
    pub selected_positions: Vec<usize>,
    pub is_max: bool,
    pub queries_used: usize,
    /// Values strictly above the trigger threshold.
    pub count_above_threshold: usize,
    /// Times the running maximum changes among those values.
    pub running_max_changes: usize,
}

/// Oracle answer for position `i` of the presented sequence.
pub fn answer_oracle(values: &[f64], i: usize, semantics: OracleSemantics) -> bool {
    let rest = values[i + 1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match semantics {
        OracleSemantics::Strict => values[i] > rest,
        OracleSemantics::Weak => values[i] >= rest,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ordering {
    Natural,
    /// First variable, then every nonzero middle value in index order, then
    /// the zero middles, then the last variable.
    StackNonzeros,
    /// `presented[j] = values[perm[j]]`.
    Explicit(Vec<usize>),
}

impl Ordering {
    /// Check the ordering fits instances of this shape.
    pub fn check(&self, instance: &Instance) -> Result<(), EngineError> {
        match self {
            Ordering::Natural => Ok(()),
            Ordering::Explicit(perm) => check_permutation(perm, instance.len()),
            Ordering::StackNonzeros => {
                let vars = instance.variables().ok_or_else(|| {
                    EngineError::Ordering("stack_nonzeros needs a discrete instance".into())
                })?;
                if vars.len() < 2 {
                    return Err(EngineError::Ordering(
                        "stack_nonzeros needs at least two variables".into(),
                    ));
                }
                if !vars[0].is_deterministic() {
                    return Err(EngineError::Ordering(
                        "stack_nonzeros needs a deterministic first variable".into(),
                    ));
                }
                let last = vars.last().unwrap();
                if last.atoms[0].value != 0.0 || last.is_deterministic() {
                    return Err(EngineError::Ordering(
                        "stack_nonzeros needs a last variable with a zero atom".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Write the presented sequence into `out`.
    pub fn present_into(&self, values: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            Ordering::Natural => out.extend_from_slice(values),
            Ordering::Explicit(perm) => out.extend(perm.iter().map(|&j| values[j])),
            Ordering::StackNonzeros => {
                let n = values.len();
                out.push(values[0]);
                if n == 1 {
                    return;
                }
                let middle = &values[1..n - 1];
                out.extend(middle.iter().copied().filter(|&v| v != 0.0));
                out.resize(n - 1, 0.0);
                out.push(values[n - 1]);
            }
        }
    }

    fn permutation(&self, values: &[f64]) -> Vec<usize> {
        let n = values.len();
        match self {
            Ordering::Natural => (0..n).collect(),
            Ordering::Explicit(perm) => perm.clone(),
            Ordering::StackNonzeros => {
                let mut perm = vec![0];
                perm.extend((1..n - 1).filter(|&j| values[j] != 0.0));
                perm.extend((1..n - 1).filter(|&j| values[j] == 0.0));
                perm.push(n - 1);
                perm
            }
        }
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<(), EngineError> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(EngineError::Ordering(format!(
            "permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    for &j in perm {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(EngineError::Ordering(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
    }
    Ok(())
}

/// Presented sequence and permutation `sigma` with `presented[j] = values[sigma[j]]`.
pub fn apply_ordering(
    values: &[f64],
    ordering: &Ordering,
) -> Result<(Vec<f64>, Vec<usize>), EngineError> {
    match ordering {
        Ordering::Explicit(perm) => check_permutation(perm, values.len())?,
        Ordering::StackNonzeros if values.len() < 2 => {
            return Err(EngineError::Ordering(
                "stack_nonzeros needs at least two values".into(),
            ))
        }
        _ => {}
    }
    let mut presented = Vec::with_capacity(values.len());
    ordering.present_into(values, &mut presented);
    Ok((presented, ordering.permutation(values)))
}

/// `tau` just below the `e^{-xi_m}` quantile of the maximum, so that a strict
/// `value > tau` trigger fires on the quantile atom itself.
pub fn quantile_threshold(instance: &Instance, m: usize) -> Result<f64, EngineError> {
    let law = instance.max_law()?;
    let level = (-mathkit::exponent(m)?.xi).exp();
    let mut chosen = 0;
    for j in 0..law.len() {
        let below = if j == 0 { 0.0 } else { law[j - 1].cdf };
        if below <= level {
            chosen = j;
        }
    }
    let v = law[chosen].value;
    if v == 0.0 {
        return Ok(0.0);
    }
    let lower = if chosen == 0 { 0.0 } else { law[chosen - 1].value };
    Ok(0.5 * (lower + v))
}

fn episode_stats(presented: &[f64], threshold: Option<f64>) -> (usize, usize) {
    let t = threshold.unwrap_or(f64::NEG_INFINITY);
    let mut count = 0;
    let mut changes = 0;
    let mut best = f64::NEG_INFINITY;
    for &v in presented {
        if v > t {
            count += 1;
            if v > best {
                best = v;
                changes += 1;
            }
        }
    }
    (count, changes)
}

fn finish(
    presented: &[f64],
    strategy: &Strategy,
    selected: Vec<usize>,
    queries_used: usize,
) -> EpisodeResult {
    let z = presented.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let payoff = selected
        .iter()
        .map(|&i| presented[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let is_max = !selected.is_empty() && payoff == z;
    let (count, changes) = episode_stats(presented, strategy.trigger_threshold());
    EpisodeResult {
        payoff: payoff.max(0.0),
        selected_positions: selected,
        is_max,
        queries_used,
        count_above_threshold: count,
        running_max_changes: changes,
    }
}

/// Run one oracle-model episode on an already presented sequence.
///
/// Panics if the agent queries with no budget left.
pub fn oracle_engine(
    presented: &[f64],
    strategy: &dyn OracleStrategy,
    budget: usize,
    semantics: OracleSemantics,
) -> (Vec<usize>, usize) {
    let len = presented.len();
    let mut agent = strategy.start(len, budget);
    let mut left = budget;
    let mut level = agent.pass_level();
    for (i, &value) in presented.iter().enumerate() {
        if value <= level {
            continue;
        }
        let obs = Observation {
            position: i,
            len,
            value,
            budget: left,
        };
        match agent.act(&obs) {
            Action::Skip => {}
            Action::Accept => return (vec![i], budget - left),
            Action::Query => {
                assert!(left > 0, "query issued at position {i} with no budget left");
                left -= 1;
                let yes = answer_oracle(presented, i, semantics);
                let after = Observation { budget: left, ..obs };
                match agent.on_answer(&after, yes) {
                    Action::Accept => return (vec![i], budget - left),
                    Action::Skip => {}
                    Action::Query => panic!("second query for the same value at position {i}"),
                }
            }
        }
        level = agent.pass_level();
    }
    (Vec::new(), budget - left)
}

/// Run one Top-1-of-`capacity` episode on an already presented sequence.
pub fn top1_engine(
    presented: &[f64],
    strategy: &dyn SelectionStrategy,
    capacity: usize,
) -> Vec<usize> {
    let len = presented.len();
    let mut agent = strategy.start(len, capacity);
    let mut selected = Vec::new();
    let mut level = agent.pass_level();
    for (i, &value) in presented.iter().enumerate() {
        if selected.len() == capacity {
            break;
        }
        if value <= level {
            continue;
        }
        let obs = Observation {
            position: i,
            len,
            value,
            budget: capacity - selected.len(),
        };
        if agent.offer(&obs) {
            selected.push(i);
        }
        level = agent.pass_level();
    }
    selected
}

/// Run `strategy` on a presented sequence. `budget` is the query budget for
/// oracle strategies and the capacity `k` for Top-1 strategies.
pub fn play(
    presented: &[f64],
    strategy: &Strategy,
    budget: usize,
    semantics: OracleSemantics,
) -> EpisodeResult {
    match strategy {
        Strategy::Oracle(s) => {
            let (selected, used) = oracle_engine(presented, s.as_ref(), budget, semantics);
            finish(presented, strategy, selected, used)
        }
        Strategy::Top1(s) => {
            let selected = top1_engine(presented, s.as_ref(), budget);
            finish(presented, strategy, selected, 0)
        }
    }
}

/// Sample a realization, present it and play one episode.
pub fn run_episode<R: Rng + ?Sized>(
    instance: &Instance,
    ordering: &Ordering,
    strategy: &Strategy,
    budget: usize,
    semantics: OracleSemantics,
    rng: &mut R,
) -> Result<EpisodeResult, EngineError> {
    instance.validate()?;
    ordering.check(instance)?;
    let values = Sampler::new(instance).sample(rng);
    let mut presented = Vec::with_capacity(values.len());
    ordering.present_into(&values, &mut presented);
    Ok(play(&presented, strategy, budget, semantics))
}

