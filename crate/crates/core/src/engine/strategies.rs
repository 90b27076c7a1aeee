use std::collections::BTreeSet;
use std::sync::Arc;

use super::{Action, Observation, OracleAgent, OracleStrategy, SelectionAgent, SelectionStrategy};
use crate::error::EngineError;

/// Query every value above a rising bar. A NO raises the bar to the value
/// just refused; with no queries left the first value above the bar is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleThreshold {
    pub tau: f64,
}

impl SingleThreshold {
    pub fn new(tau: f64) -> Result<Self, EngineError> {
        if tau >= 0.0 && tau.is_finite() {
            Ok(Self { tau })
        } else {
            Err(EngineError::Params(format!("tau must be a finite value >= 0, got {tau}")))
        }
    }
}

struct ThresholdAgent {
    level: f64,
}

impl OracleAgent for ThresholdAgent {
    fn act(&mut self, obs: &Observation) -> Action {
        if obs.value <= self.level {
            Action::Skip
        } else if obs.budget > 0 {
            Action::Query
        } else {
            Action::Accept
        }
    }

    fn on_answer(&mut self, obs: &Observation, yes: bool) -> Action {
        if yes {
            Action::Accept
        } else {
            self.level = obs.value;
            Action::Skip
        }
    }

    fn pass_level(&self) -> f64 {
        self.level
    }
}

impl OracleStrategy for SingleThreshold {
    fn start(&self, _len: usize, _budget: usize) -> Box<dyn OracleAgent + '_> {
        Box::new(ThresholdAgent { level: self.tau })
    }

    fn trigger_threshold(&self) -> Option<f64> {
        Some(self.tau)
    }
}

/// Threshold strategy for `n` iid uniforms with `P[X > tau] = q / n`.
pub fn iid_pbm_strategy(q: f64, n: usize) -> Result<SingleThreshold, EngineError> {
    let p = q / n as f64;
    if !(p > 0.0 && p < 1.0) {
        return Err(EngineError::Params(format!("q / n = {p} must lie in (0, 1)")));
    }
    SingleThreshold::new(1.0 - p)
}

/// The large-budget variant: `q = e^{sqrt(m)}`.
pub fn general_m_pbm_strategy(n: usize, m: usize) -> Result<SingleThreshold, EngineError> {
    iid_pbm_strategy((m as f64).sqrt().exp(), n)
}

/// Query nonzero values at the listed positions; accept on YES. The last
/// position is accepted whenever it is nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    pub positions: BTreeSet<usize>,
}

impl QuerySet {
    pub fn new(positions: impl IntoIterator<Item = usize>) -> Self {
        Self {
            positions: positions.into_iter().collect(),
        }
    }
}

struct QuerySetAgent<'a> {
    positions: &'a BTreeSet<usize>,
}

impl OracleAgent for QuerySetAgent<'_> {
    fn act(&mut self, obs: &Observation) -> Action {
        if obs.value <= 0.0 {
            Action::Skip
        } else if obs.is_last() {
            Action::Accept
        } else if obs.budget > 0 && self.positions.contains(&obs.position) {
            Action::Query
        } else {
            Action::Skip
        }
    }

    fn on_answer(&mut self, _obs: &Observation, yes: bool) -> Action {
        if yes {
            Action::Accept
        } else {
            Action::Skip
        }
    }

    fn pass_level(&self) -> f64 {
        0.0
    }
}

impl OracleStrategy for QuerySet {
    fn start(&self, _len: usize, _budget: usize) -> Box<dyn OracleAgent + '_> {
        Box::new(QuerySetAgent {
            positions: &self.positions,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelectAll;

struct Always;

impl SelectionAgent for Always {
    fn offer(&mut self, _obs: &Observation) -> bool {
        true
    }
}

impl SelectionStrategy for SelectAll {
    fn start(&self, _len: usize, _capacity: usize) -> Box<dyn SelectionAgent + '_> {
        Box::new(Always)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelectNone;

struct Never;

impl SelectionAgent for Never {
    fn offer(&mut self, _obs: &Observation) -> bool {
        false
    }

    fn pass_level(&self) -> f64 {
        f64::INFINITY
    }
}

impl SelectionStrategy for SelectNone {
    fn start(&self, _len: usize, _capacity: usize) -> Box<dyn SelectionAgent + '_> {
        Box::new(Never)
    }
}

/// Select at fixed positions, optionally only when the value there is nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectPositions {
    pub positions: BTreeSet<usize>,
    pub nonzero_only: bool,
}

impl SelectPositions {
    pub fn new(positions: impl IntoIterator<Item = usize>, nonzero_only: bool) -> Self {
        Self {
            positions: positions.into_iter().collect(),
            nonzero_only,
        }
    }

    /// Keep the first value and the last one when it is nonzero.
    pub fn first_and_last(len: usize) -> Self {
        Self::new([0, len.saturating_sub(1)], true)
    }
}

struct PositionsAgent<'a>(&'a SelectPositions);

impl SelectionAgent for PositionsAgent<'_> {
    fn offer(&mut self, obs: &Observation) -> bool {
        self.0.positions.contains(&obs.position) && !(self.0.nonzero_only && obs.value == 0.0)
    }
}

impl SelectionStrategy for SelectPositions {
    fn start(&self, _len: usize, _capacity: usize) -> Box<dyn SelectionAgent + '_> {
        Box::new(PositionsAgent(self))
    }
}

/// Select every value above `threshold` that beats everything seen so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningMaxima {
    pub threshold: f64,
}

struct RecordAgent {
    level: f64,
}

impl SelectionAgent for RecordAgent {
    fn offer(&mut self, obs: &Observation) -> bool {
        let record = obs.value > self.level;
        self.level = self.level.max(obs.value);
        record
    }

    fn pass_level(&self) -> f64 {
        self.level
    }
}

impl SelectionStrategy for RunningMaxima {
    fn start(&self, _len: usize, _capacity: usize) -> Box<dyn SelectionAgent + '_> {
        Box::new(RecordAgent {
            level: self.threshold,
        })
    }

    fn trigger_threshold(&self) -> Option<f64> {
        Some(self.threshold)
    }
}

/// Top-1-of-(m+1) strategy built from an oracle strategy with budget `m`.
///
/// The inner strategy is told NO on every query, i.e. that a larger value is
/// still coming, and every value it queries or accepts is kept. Until the
/// inner strategy's first true YES the two runs coincide, so the kept set
/// always contains whatever the inner strategy would have taken.
#[derive(Debug, Clone)]
pub struct WrapOracleAsTop1 {
    pub inner: Arc<dyn OracleStrategy>,
    pub budget: usize,
}

impl WrapOracleAsTop1 {
    pub fn new(inner: Arc<dyn OracleStrategy>, budget: usize) -> Self {
        Self { inner, budget }
    }

    pub fn capacity(&self) -> usize {
        self.budget + 1
    }
}

struct OracleAsTop1Agent<'a> {
    inner: Box<dyn OracleAgent + 'a>,
    queries_left: usize,
    done: bool,
}

impl SelectionAgent for OracleAsTop1Agent<'_> {
    fn offer(&mut self, obs: &Observation) -> bool {
        if self.done {
            return false;
        }
        let inner_obs = Observation {
            budget: self.queries_left,
            ..*obs
        };
        match self.inner.act(&inner_obs) {
            Action::Skip => false,
            Action::Accept => {
                self.done = true;
                true
            }
            Action::Query => {
                self.queries_left -= 1;
                let after = Observation {
                    budget: self.queries_left,
                    ..*obs
                };
                if self.inner.on_answer(&after, false) == Action::Accept {
                    self.done = true;
                }
                true
            }
        }
    }

    fn pass_level(&self) -> f64 {
        if self.done {
            f64::INFINITY
        } else {
            self.inner.pass_level()
        }
    }
}

impl SelectionStrategy for WrapOracleAsTop1 {
    fn start(&self, len: usize, _capacity: usize) -> Box<dyn SelectionAgent + '_> {
        Box::new(OracleAsTop1Agent {
            inner: self.inner.start(len, self.budget),
            queries_left: self.budget,
            done: false,
        })
    }

    fn trigger_threshold(&self) -> Option<f64> {
        self.inner.trigger_threshold()
    }
}

/// Oracle strategy with budget `k - 1` built from a Top-1-of-k strategy:
/// each would-be selection becomes a query, and the last one an acceptance.
#[derive(Debug, Clone)]
pub struct WrapTop1AsOracle {
    pub inner: Arc<dyn SelectionStrategy>,
    pub capacity: usize,
}

impl WrapTop1AsOracle {
    pub fn new(inner: Arc<dyn SelectionStrategy>, capacity: usize) -> Result<Self, EngineError> {
        if capacity == 0 {
            return Err(EngineError::Params("capacity k must be >= 1".into()));
        }
        Ok(Self { inner, capacity })
    }

    pub fn budget(&self) -> usize {
        self.capacity - 1
    }
}

struct Top1AsOracleAgent<'a> {
    inner: Box<dyn SelectionAgent + 'a>,
    capacity_left: usize,
}

impl OracleAgent for Top1AsOracleAgent<'_> {
    fn act(&mut self, obs: &Observation) -> Action {
        if self.capacity_left == 0 {
            return Action::Skip;
        }
        let inner_obs = Observation {
            budget: self.capacity_left,
            ..*obs
        };
        if !self.inner.offer(&inner_obs) {
            return Action::Skip;
        }
        self.capacity_left -= 1;
        if obs.budget > 0 {
            Action::Query
        } else {
            Action::Accept
        }
    }

    fn on_answer(&mut self, _obs: &Observation, yes: bool) -> Action {
        if yes {
            Action::Accept
        } else {
            Action::Skip
        }
    }

    fn pass_level(&self) -> f64 {
        if self.capacity_left == 0 {
            f64::INFINITY
        } else {
            self.inner.pass_level()
        }
    }
}

impl OracleStrategy for WrapTop1AsOracle {
    fn start(&self, len: usize, _budget: usize) -> Box<dyn OracleAgent + '_> {
        Box::new(Top1AsOracleAgent {
            inner: self.inner.start(len, self.capacity),
            capacity_left: self.capacity,
        })
    }

    fn trigger_threshold(&self) -> Option<f64> {
        self.inner.trigger_threshold()
    }
}
