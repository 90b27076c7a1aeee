use std::collections::HashMap;

use super::{play, Model, Objective, OracleSemantics, Ordering, Strategy};
use crate::error::EngineError;
use crate::instances::Instance;

/// Largest joint outcome space [`exact_strategy_value`] will enumerate.
pub const EXACT_MAX_OUTCOMES: usize = 1_000_000;

const OPT_MAX_LEN: usize = 6;
const OPT_MAX_SUPPORT: usize = 3;
const OPT_MAX_BUDGET: usize = 3;

/// Every presented sequence with its probability.
fn outcomes(
    instance: &Instance,
    ordering: &Ordering,
    cap: usize,
) -> Result<Vec<(Vec<f64>, f64)>, EngineError> {
    let vars = instance.variables().ok_or_else(|| {
        EngineError::Unsupported("exact evaluation needs a discrete instance".into())
    })?;
    instance.validate()?;
    ordering.check(instance)?;
    let total = vars
        .iter()
        .try_fold(1usize, |acc, v| acc.checked_mul(v.atoms.len()))
        .filter(|&t| t <= cap)
        .ok_or_else(|| {
            EngineError::TooLarge(format!("joint outcome space exceeds {cap} outcomes"))
        })?;

    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; vars.len()];
    let mut values = vec![0.0; vars.len()];
    loop {
        let mut prob = 1.0;
        for (i, (v, &d)) in vars.iter().zip(&digits).enumerate() {
            values[i] = v.atoms[d].value;
            prob *= v.atoms[d].prob;
        }
        let mut presented = Vec::with_capacity(values.len());
        ordering.present_into(&values, &mut presented);
        out.push((presented, prob));

        let mut i = vars.len();
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < vars[i].atoms.len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// Exact expected payoff (`RoE`) or success probability (`PbM`) of a
/// deterministic strategy, by enumerating every joint outcome.
pub fn exact_strategy_value(
    instance: &Instance,
    ordering: &Ordering,
    strategy: &Strategy,
    budget: usize,
    semantics: OracleSemantics,
    objective: Objective,
) -> Result<f64, EngineError> {
    let outcomes = outcomes(instance, ordering, EXACT_MAX_OUTCOMES)?;
    Ok(outcomes
        .iter()
        .map(|(seq, p)| {
            let r = play(seq, strategy, budget, semantics);
            p * match objective {
                Objective::RoE => r.payoff,
                Objective::PbM => f64::from(u8::from(r.is_max)),
            }
        })
        .sum())
}

/// Weighted suffixes still consistent with everything observed, sorted and
/// with duplicates merged.
type Futures = Vec<(Vec<f64>, f64)>;

fn canonical(mut fut: Futures) -> Futures {
    fut.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut merged: Futures = Vec::with_capacity(fut.len());
    for (s, w) in fut {
        match merged.last_mut() {
            Some((last, lw)) if *last == s => *lw += w,
            _ => merged.push((s, w)),
        }
    }
    merged
}

fn suffix_max(s: &[f64]) -> f64 {
    s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

struct Search {
    semantics: OracleSemantics,
    objective: Objective,
    memo: HashMap<Vec<u64>, f64>,
}

impl Search {
    fn key(tag: u64, a: usize, b: f64, c: f64, fut: &Futures) -> Vec<u64> {
        let mut k = vec![tag, a as u64, b.to_bits(), c.to_bits()];
        for (s, w) in fut {
            k.push(s.len() as u64);
            k.extend(s.iter().map(|v| v.to_bits()));
            k.push(w.to_bits());
        }
        k
    }

    /// Groups of futures sharing the current value, each with its tail.
    fn split_head(fut: &Futures) -> Vec<(f64, Futures)> {
        let mut groups: Vec<(f64, Futures)> = Vec::new();
        for (s, w) in fut {
            let tail = (s[1..].to_vec(), *w);
            match groups.last_mut() {
                Some((v, g)) if *v == s[0] => g.push(tail),
                _ => groups.push((s[0], vec![tail])),
            }
        }
        groups
    }

    /// Value of keeping `best` against these futures.
    fn settle(&self, best: f64, prefix_max: f64, fut: &Futures) -> f64 {
        match self.objective {
            Objective::RoE => best.max(0.0) * fut.iter().map(|(_, w)| w).sum::<f64>(),
            Objective::PbM if best == f64::NEG_INFINITY => 0.0,
            Objective::PbM => fut
                .iter()
                .filter(|(s, _)| best >= prefix_max && best >= suffix_max(s))
                .map(|(_, w)| w)
                .sum(),
        }
    }

    fn track(&self, prefix_max: f64, v: f64) -> f64 {
        match self.objective {
            Objective::RoE => f64::NEG_INFINITY,
            Objective::PbM => prefix_max.max(v),
        }
    }

    fn oracle(&mut self, budget: usize, prefix_max: f64, fut: &Futures) -> f64 {
        if fut.is_empty() || fut[0].0.is_empty() {
            return 0.0;
        }
        let key = Self::key(0, budget, prefix_max, 0.0, fut);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let mut total = 0.0;
        for (v, rest) in Self::split_head(fut) {
            let pm = self.track(prefix_max, v);
            let accept = self.settle(v, prefix_max, &rest);
            let mut best = accept.max(self.oracle(budget, pm, &rest));
            if budget > 0 {
                let (yes, no): (Futures, Futures) = rest.into_iter().partition(|(s, _)| {
                    let m = suffix_max(s);
                    match self.semantics {
                        OracleSemantics::Strict => v > m,
                        OracleSemantics::Weak => v >= m,
                    }
                });
                let mut query = 0.0;
                for part in [yes, no] {
                    if !part.is_empty() {
                        let take = self.settle(v, prefix_max, &part);
                        query += take.max(self.oracle(budget - 1, pm, &part));
                    }
                }
                best = best.max(query);
            }
            total += best;
        }
        self.memo.insert(key, total);
        total
    }

    fn top1(&mut self, capacity: usize, best: f64, prefix_max: f64, fut: &Futures) -> f64 {
        if fut.is_empty() {
            return 0.0;
        }
        if capacity == 0 || fut[0].0.is_empty() {
            return self.settle(best, prefix_max, fut);
        }
        let key = Self::key(1, capacity, best, prefix_max, fut);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let mut total = 0.0;
        for (v, rest) in Self::split_head(fut) {
            let pm = self.track(prefix_max, v);
            let pass = self.top1(capacity, best, pm, &rest);
            let take = self.top1(capacity - 1, best.max(v), pm, &rest);
            total += pass.max(take);
        }
        self.memo.insert(key, total);
        total
    }
}

/// Value of the best deterministic adaptive strategy, by expectimax over the
/// set of presented futures consistent with what has been seen and answered.
pub fn exact_optimal(
    instance: &Instance,
    ordering: &Ordering,
    model: Model,
    objective: Objective,
    semantics: OracleSemantics,
) -> Result<f64, EngineError> {
    let vars = instance.variables().ok_or_else(|| {
        EngineError::Unsupported("exact search needs a discrete instance".into())
    })?;
    if vars.len() > OPT_MAX_LEN {
        return Err(EngineError::TooLarge(format!(
            "{} variables; exact search allows at most {OPT_MAX_LEN}",
            vars.len()
        )));
    }
    if let Some(i) = vars.iter().position(|v| v.atoms.len() > OPT_MAX_SUPPORT) {
        return Err(EngineError::TooLarge(format!(
            "variable {i} has {} atoms; exact search allows at most {OPT_MAX_SUPPORT}",
            vars[i].atoms.len()
        )));
    }
    let over = match model {
        Model::Oracle { budget } => budget > OPT_MAX_BUDGET,
        Model::Top1 { capacity } => capacity > OPT_MAX_BUDGET + 1,
    };
    if over {
        return Err(EngineError::TooLarge(format!(
            "{model:?}; exact search allows at most {OPT_MAX_BUDGET} queries"
        )));
    }

    let fut = canonical(outcomes(instance, ordering, EXACT_MAX_OUTCOMES)?);
    let mut search = Search {
        semantics,
        objective,
        memo: HashMap::new(),
    };
    Ok(match model {
        Model::Oracle { budget } => search.oracle(budget, f64::NEG_INFINITY, &fut),
        Model::Top1 { capacity } => {
            search.top1(capacity, f64::NEG_INFINITY, f64::NEG_INFINITY, &fut)
        }
    })
}
