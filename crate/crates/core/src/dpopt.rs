//! Optimal and single-threshold values on the two-valued family.
//!
//! Every variable is zero or one positive value, positive values increase
//! along the sequence, and the last one is a rare large tail. That structure
//! lets the optimal oracle strategy be computed by a backward recursion over
//! (position, queries left) with a second table conditioned on some positive
//! value still being ahead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::DpError;
use crate::instances::FamilyParams;
use crate::mathkit;

/// `b_k` and `p_k = P[X_k = b_k]` (zero otherwise), and the query budget.
#[derive(Debug, Clone, PartialEq)]
pub struct DpInputs {
    pub b: Vec<f64>,
    pub p: Vec<f64>,
    pub m: usize,
}

impl DpInputs {
    pub fn new(b: Vec<f64>, p: Vec<f64>, m: usize) -> Result<Self, DpError> {
        let inputs = Self { b, p, m };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn from_family(params: &FamilyParams, value_step: f64) -> Result<Self, DpError> {
        params.validate(value_step)?;
        Self::new(params.values(value_step), params.probs(), params.m)
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    fn validate(&self) -> Result<(), DpError> {
        let bad = |msg: String| Err(DpError::Inputs(msg));
        if self.b.is_empty() {
            return bad("no variables".into());
        }
        if self.b.len() != self.p.len() {
            return bad(format!("{} values but {} probabilities", self.b.len(), self.p.len()));
        }
        if let Some(i) = self.p.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return bad(format!("p[{i}] = {} is outside (0, 1]", self.p[i]));
        }
        if let Some(i) = self.b.iter().position(|&b| !(b >= 0.0 && b.is_finite())) {
            return bad(format!("b[{i}] = {} is negative or not finite", self.b[i]));
        }
        let positive: Vec<f64> = self.b.iter().copied().filter(|&b| b > 0.0).collect();
        if positive.windows(2).any(|w| w[0] >= w[1]) {
            return bad("positive values must be strictly increasing".into());
        }
        Ok(())
    }

    /// `ln P[Z_k = 0]` for `k = 1..=N+1`, 0-based.
    fn log_none_from(&self) -> Vec<f64> {
        let n = self.len();
        let mut s = vec![0.0; n + 1];
        for k in (0..n).rev() {
            s[k] = s[k + 1] + (-self.p[k]).ln_1p();
        }
        s
    }
}

/// Filled recursion tables. Row `t` holds queries left; column `k - 1` holds
/// position `k`, with the extra last column the empty-suffix base case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTables {
    pub e: Vec<Vec<f64>>,
    pub e_up: Vec<Vec<f64>>,
    /// `alpha_k = P[X_k > 0] / P[Z_k > 0]`, zero when the denominator is.
    pub alpha: Vec<f64>,
    /// `beta_k = P[Z_k > 0]`, length `N + 1`.
    pub beta: Vec<f64>,
}

/// One step of the recursion at position `k` (0-based `k`), in place.
///
/// `e[t]` and `up[t]` hold the values at `k + 1` on entry and at `k` on exit.
#[inline]
fn step(b: f64, p: f64, alpha: f64, none_next: f64, e: &mut [f64], up: &mut [f64]) {
    let beta_next = -none_next.exp_m1();
    let none_next = none_next.exp();
    for t in (0..e.len()).rev() {
        let inner = if t > 0 {
            e[t].max(none_next * b + beta_next * up[t - 1])
        } else {
            e[0].max(b)
        };
        e[t] = (1.0 - p) * e[t] + p * inner;
        up[t] = (1.0 - alpha) * up[t] + alpha * inner;
    }
}

fn alpha_at(p: f64, log_none: f64) -> f64 {
    let pz = -log_none.exp_m1();
    if pz > 0.0 {
        p / pz
    } else {
        0.0
    }
}

/// Optimal expected payoff with `m` queries, and the full tables.
pub fn dp_optimal(inputs: &DpInputs) -> Result<(f64, DpTables), DpError> {
    inputs.validate()?;
    let n = inputs.len();
    let m = inputs.m;
    let s = inputs.log_none_from();
    let mut e = vec![vec![0.0; n + 1]; m + 1];
    let mut e_up = vec![vec![0.0; n + 1]; m + 1];
    let mut alpha = vec![0.0; n];
    let beta: Vec<f64> = s.iter().map(|x| -x.exp_m1()).collect();

    let mut col_e = vec![0.0; m + 1];
    let mut col_up = vec![0.0; m + 1];
    for k in (0..n).rev() {
        alpha[k] = alpha_at(inputs.p[k], s[k]);
        step(inputs.b[k], inputs.p[k], alpha[k], s[k + 1], &mut col_e, &mut col_up);
        for t in 0..=m {
            e[t][k] = col_e[t];
            e_up[t][k] = col_up[t];
        }
    }
    let value = e[m][0];
    if !value.is_finite() {
        return Err(crate::error::MathError::Numerical("DP value is not finite".into()).into());
    }
    Ok((value, DpTables { e, e_up, alpha, beta }))
}

/// Optimal value only, in `O(m)` memory.
pub fn dp_value(inputs: &DpInputs) -> Result<f64, DpError> {
    inputs.validate()?;
    let s = inputs.log_none_from();
    let mut e = vec![0.0; inputs.m + 1];
    let mut up = vec![0.0; inputs.m + 1];
    for k in (0..inputs.len()).rev() {
        let alpha = alpha_at(inputs.p[k], s[k]);
        step(inputs.b[k], inputs.p[k], alpha, s[k + 1], &mut e, &mut up);
    }
    Ok(e[inputs.m])
}

impl DpTables {
    /// Largest gap between a stored cell and the recursion applied to its
    /// stored children.
    pub fn max_residual(&self, inputs: &DpInputs) -> f64 {
        let n = inputs.len();
        let s = inputs.log_none_from();
        let mut worst: f64 = 0.0;
        for t in 0..self.e.len() {
            worst = worst.max(self.e[t][n].abs()).max(self.e_up[t][n].abs());
        }
        for k in 0..n {
            let (b, p, a) = (inputs.b[k], inputs.p[k], self.alpha[k]);
            let (none, beta) = (s[k + 1].exp(), self.beta[k + 1]);
            for t in 0..self.e.len() {
                let inner = if t > 0 {
                    self.e[t][k + 1].max(none * b + beta * self.e_up[t - 1][k + 1])
                } else {
                    self.e[0][k + 1].max(b)
                };
                let e = (1.0 - p) * self.e[t][k + 1] + p * inner;
                let up = (1.0 - a) * self.e_up[t][k + 1] + a * inner;
                worst = worst
                    .max((e - self.e[t][k]).abs())
                    .max((up - self.e_up[t][k]).abs());
            }
        }
        worst
    }
}

/// Exact `E[max]` of the family at finite `n` and `eps`.
pub fn family_expected_max(params: &FamilyParams) -> Result<f64, DpError> {
    family_expected_max_with_step(params, params.default_value_step())
}

pub fn family_expected_max_with_step(params: &FamilyParams, value_step: f64) -> Result<f64, DpError> {
    params.validate(value_step)?;
    let p = params.middle_prob();
    let n = params.n;
    // Without the tail, Z is the last nonzero middle value, or 1.
    let mut body = 0.0;
    let mut none_after = 1.0; // (1 - p)^(number of middles after i)
    for i in (2..=n + 1).rev() {
        body += (1.0 + value_step * (i - 1) as f64) * p * none_after;
        none_after *= 1.0 - p;
    }
    body += none_after;
    Ok(params.eps * params.tail_value() + (1.0 - params.eps) * body)
}

fn binomial_pmf(trials: usize, p: f64) -> impl Iterator<Item = f64> {
    let q = 1.0 - p;
    let ratio = p / q;
    let mut pmf = (trials as f64 * (-p).ln_1p()).exp();
    (0..=trials).map(move |k| {
        let out = pmf;
        pmf *= (trials - k) as f64 / (k + 1) as f64 * ratio;
        out
    })
}

/// `P[K <= m]` for `K ~ Bin(trials, p)`.
fn binomial_cdf(trials: usize, p: f64, m: usize) -> f64 {
    binomial_pmf(trials, p).take(m + 1).sum::<f64>().min(1.0)
}

/// Expected payoff, as `eps -> 0`, of the rising-bar threshold strategy with
/// a weak oracle in natural order.
///
/// `threshold_choice` 0 triggers on every positive value; `j` in `1..=n`
/// triggers on middles `j + 1..=n + 1` and the tail; `n + 1` on the tail only.
pub fn single_threshold_value_exact(params: &FamilyParams, threshold_choice: usize) -> Result<f64, DpError> {
    params.validate(params.default_value_step())?;
    let (n, m, c2) = (params.n, params.m, params.c2);
    let p = params.middle_prob();
    Ok(match threshold_choice {
        // X_1 uses a query; the tail is caught iff at most m - 1 middles follow.
        0 => 1.0 + c2 * binomial_cdf(n, p, m - 1),
        j if j <= n => {
            let trials = n - j + 1;
            let none = binomial_pmf(trials, p).next().unwrap();
            c2 * binomial_cdf(trials, p, m) + (1.0 - none)
        }
        j if j == n + 1 => c2,
        j => {
            return Err(DpError::Inputs(format!(
                "threshold index {j} outside 0..={}",
                n + 1
            )))
        }
    })
}

/// Best of the `n + 2` single-threshold strategies: (index, value, ratio).
pub fn best_single_threshold(params: &FamilyParams) -> Result<(usize, f64, f64), DpError> {
    let ez = family_expected_max(params)?;
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..=params.n + 1 {
        let v = single_threshold_value_exact(params, j)?;
        if v > best.1 {
            best = (j, v);
        }
    }
    Ok((best.0, best.1, best.1 / ez))
}

/// Optimal DP ratio `E_m(1) / E[Z]` for one family member.
pub fn dp_ratio(params: &FamilyParams) -> Result<f64, DpError> {
    let step = params.default_value_step();
    let value = dp_value(&DpInputs::from_family(params, step)?)?;
    Ok(value / family_expected_max_with_step(params, step)?)
}

/// Axis-aligned grid over `(c1, c2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub c1_range: (f64, f64),
    pub c2_range: (f64, f64),
    pub c1_steps: usize,
    pub c2_steps: usize,
    /// Re-scan at 10x resolution within one coarse cell of the argmin.
    pub refine: bool,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            c1_range: (0.5, 8.0),
            c2_range: (0.4, 1.0),
            c1_steps: 76,
            c2_steps: 61,
            refine: true,
        }
    }
}

impl Grid {
    pub fn point(c1: f64, c2: f64) -> Self {
        Self {
            c1_range: (c1, c1),
            c2_range: (c2, c2),
            c1_steps: 1,
            c2_steps: 1,
            refine: false,
        }
    }

    fn validate(&self) -> Result<(), DpError> {
        for (name, (lo, hi), steps) in [
            ("c1", self.c1_range, self.c1_steps),
            ("c2", self.c2_range, self.c2_steps),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(DpError::Inputs(format!("{name} range ({lo}, {hi}) is invalid")));
            }
            if steps == 0 || (steps == 1 && hi != lo) {
                return Err(DpError::Inputs(format!(
                    "{name} needs at least 2 steps over a nonempty range"
                )));
            }
        }
        Ok(())
    }
}

fn axis((lo, hi): (f64, f64), steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (steps - 1) as f64;
    (0..steps).map(|i| lo + h * i as f64).collect()
}

/// Result of a worst-case search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub c1: f64,
    pub c2: f64,
    pub ratio: f64,
}

fn scan(m: usize, n: usize, eps: f64, c1s: &[f64], c2s: &[f64]) -> Option<WorstCase> {
    let points: Vec<(f64, f64)> = c1s
        .iter()
        .flat_map(|&c1| c2s.iter().map(move |&c2| (c1, c2)))
        .collect();
    let ratios: Vec<Option<f64>> = points
        .par_iter()
        .map(|&(c1, c2)| dp_ratio(&FamilyParams::new(m, n, eps, c1, c2)).ok())
        .collect();
    let mut best: Option<WorstCase> = None;
    for (&(c1, c2), r) in points.iter().zip(ratios) {
        if let Some(ratio) = r {
            if best.is_none_or(|b| ratio < b.ratio) {
                best = Some(WorstCase { c1, c2, ratio });
            }
        }
    }
    best
}

/// Parameters minimizing the optimal ratio over a grid, c1 outer and c2 inner,
/// ascending; ties keep the first point scanned.
pub fn grid_search_worst(
    m: usize,
    n: usize,
    eps: f64,
    grid: &Grid,
    workers: usize,
) -> Result<WorstCase, DpError> {
    grid.validate()?;
    if workers == 0 {
        return Err(DpError::Inputs("workers must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| DpError::Inputs(format!("thread pool: {e}")))?;
    pool.install(|| {
        let c1s = axis(grid.c1_range, grid.c1_steps);
        let c2s = axis(grid.c2_range, grid.c2_steps);
        let mut best = scan(m, n, eps, &c1s, &c2s)
            .ok_or_else(|| DpError::Inputs("no valid grid point".into()))?;
        if grid.refine {
            let local = |centre: f64, (lo, hi): (f64, f64), steps: usize| {
                if steps < 2 {
                    return vec![centre];
                }
                let h = (hi - lo) / (steps - 1) as f64;
                let a = (centre - h).max(lo);
                let b = (centre + h).min(hi);
                let fine = ((b - a) / (h / 10.0)).round() as usize + 1;
                axis((a, b), fine.max(2))
            };
            let c1s = local(best.c1, grid.c1_range, grid.c1_steps);
            let c2s = local(best.c2, grid.c2_range, grid.c2_steps);
            if let Some(fine) = scan(m, n, eps, &c1s, &c2s) {
                if fine.ratio < best.ratio {
                    best = fine;
                }
            }
        }
        Ok(best)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub m: usize,
    pub c1: f64,
    pub c2: f64,
    pub opt_ratio: f64,
    pub target: f64,
    /// `opt_ratio - target`, signed.
    pub difference: f64,
}

pub fn discrepancy(
    m: usize,
    n: usize,
    eps: f64,
    grid: &Grid,
    workers: usize,
) -> Result<Discrepancy, DpError> {
    let worst = grid_search_worst(m, n, eps, grid, workers)?;
    let target = mathkit::exponent(m)?.target;
    Ok(Discrepancy {
        m,
        c1: worst.c1,
        c2: worst.c2,
        opt_ratio: worst.ratio,
        target,
        difference: worst.ratio - target,
    })
}
