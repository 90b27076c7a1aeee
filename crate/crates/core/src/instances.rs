//! Prophet-inequality instances: finite-support independent variables in a
//! fixed order, or `n` iid uniform(0, 1) draws.
//!
//! Zero atoms are always explicit, so a variable's atoms sum to one on their
//! own. Builders cover the adversarial constructions: the three-variable gap
//! instance and its `m + 2` generalisation, the Poisson tightness instance, and
//! the two-valued family used by the optimal DP.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::InstanceError;
use crate::mathkit;

/// Tolerance on a variable's total mass for in-memory instances.
pub const MASS_TOL: f64 = 1e-12;
/// Looser tolerance applied to files, which may come from other tools.
pub const FILE_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

impl Atom {
    pub fn new(value: f64, prob: f64) -> Self {
        Self { value, prob }
    }
}

impl From<(f64, f64)> for Atom {
    fn from((value, prob): (f64, f64)) -> Self {
        Self { value, prob }
    }
}

impl From<Atom> for (f64, f64) {
    fn from(a: Atom) -> Self {
        (a.value, a.prob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteVariable {
    pub atoms: Vec<Atom>,
}

impl DiscreteVariable {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![Atom::new(value, 1.0)])
    }

    /// Zero with probability `1 - prob`, `value` otherwise.
    pub fn two_point(value: f64, prob: f64) -> Self {
        if prob >= 1.0 {
            return Self::constant(value);
        }
        Self::new(vec![Atom::new(0.0, 1.0 - prob), Atom::new(value, prob)])
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.value * a.prob).sum()
    }

    pub fn is_deterministic(&self) -> bool {
        self.atoms.len() == 1
    }

    fn validate(&self, index: usize, tol: f64) -> Result<(), InstanceError> {
        if self.atoms.is_empty() {
            return Err(InstanceError::NoAtoms { index });
        }
        let mut prev: Option<f64> = None;
        for a in &self.atoms {
            if !(a.value >= 0.0) || !a.value.is_finite() {
                return Err(InstanceError::BadValue { index, value: a.value });
            }
            if !(a.prob > 0.0 && a.prob <= 1.0) {
                return Err(InstanceError::BadProb { index, prob: a.prob });
            }
            if let Some(p) = prev {
                if a.value == p {
                    return Err(InstanceError::NonDistinct { index, value: a.value });
                }
                if a.value < p {
                    return Err(InstanceError::Unsorted { index, value: a.value });
                }
            }
            prev = Some(a.value);
        }
        let mass: f64 = self.atoms.iter().map(|a| a.prob).sum();
        if (mass - 1.0).abs() > tol {
            return Err(InstanceError::Mass { index, mass });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Discrete(Vec<DiscreteVariable>),
    IidUniform(usize),
}

/// On-disk shape: exactly one of the two keys is present.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variables: Option<Vec<DiscreteVariable>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iid_uniform: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.carry += if self.sum.abs() >= x.abs() {
            (self.sum - t) + x
        } else {
            (x - t) + self.sum
        };
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// One support point of `Z = max_i X_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxLawPoint {
    pub value: f64,
    /// `P[Z <= value]`.
    pub cdf: f64,
    /// `P[Z > value]`, computed without cancellation.
    pub survival: f64,
}

impl Instance {
    pub fn len(&self) -> usize {
        match self {
            Instance::Discrete(vars) => vars.len(),
            Instance::IidUniform(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn variables(&self) -> Option<&[DiscreteVariable]> {
        match self {
            Instance::Discrete(vars) => Some(vars),
            Instance::IidUniform(_) => None,
        }
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        self.validate_with(MASS_TOL)
    }

    pub fn validate_with(&self, mass_tol: f64) -> Result<(), InstanceError> {
        match self {
            Instance::Discrete(vars) => {
                if vars.is_empty() {
                    return Err(InstanceError::Empty);
                }
                vars.iter()
                    .enumerate()
                    .try_for_each(|(i, v)| v.validate(i, mass_tol))
            }
            Instance::IidUniform(n) if *n == 0 => Err(InstanceError::EmptyIid),
            Instance::IidUniform(_) => Ok(()),
        }
    }

    /// Distribution of the maximum at every distinct support value, ascending.
    ///
    /// Sweeps the union of supports once, keeping `sum ln F_i(v)` over factors
    /// that are already positive and a count of those still at zero.
    pub fn max_law(&self) -> Result<Vec<MaxLawPoint>, InstanceError> {
        let vars = self.variables().ok_or_else(|| {
            InstanceError::Params("max law needs a discrete instance".into())
        })?;

        // (value, variable, cdf after value, survival after value)
        let mut events: Vec<(f64, usize, f64, f64)> = Vec::new();
        for (i, var) in vars.iter().enumerate() {
            let mut tail = 0.0;
            let mut tails = vec![0.0; var.atoms.len()];
            for j in (0..var.atoms.len()).rev() {
                tails[j] = tail;
                tail += var.atoms[j].prob;
            }
            let mut head = 0.0;
            for (j, a) in var.atoms.iter().enumerate() {
                head += a.prob;
                events.push((a.value, i, head, tails[j]));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let log_cdf = |cdf: f64, surv: f64| {
            if cdf <= 0.5 {
                cdf.ln()
            } else {
                (-surv).ln_1p()
            }
        };

        let mut factor = vec![f64::NAN; vars.len()];
        let mut zero_count = vars.len();
        // Factors are added and later removed again; compensated summation
        // keeps that cancellation exact enough for tail survivals near 1e-9.
        let mut log_sum = CompensatedSum::default();
        let mut out: Vec<MaxLawPoint> = Vec::new();
        let mut idx = 0;
        while idx < events.len() {
            let value = events[idx].0;
            while idx < events.len() && events[idx].0 == value {
                let (_, i, cdf, surv) = events[idx];
                if factor[i].is_nan() {
                    zero_count -= 1;
                } else {
                    log_sum.add(-factor[i]);
                }
                factor[i] = log_cdf(cdf, surv);
                log_sum.add(factor[i]);
                idx += 1;
            }
            let (cdf, survival) = if zero_count > 0 {
                (0.0, 1.0)
            } else if idx == events.len() {
                (1.0, 0.0)
            } else {
                let l = log_sum.value();
                (l.exp(), -l.exp_m1())
            };
            out.push(MaxLawPoint {
                value,
                cdf,
                survival,
            });
        }
        Ok(out)
    }

    /// Exact `E[max_i X_i]`. For the iid uniform kind this is `n / (n + 1)`.
    pub fn expected_max(&self) -> Result<f64, InstanceError> {
        if let Instance::IidUniform(n) = self {
            return Ok(*n as f64 / (*n as f64 + 1.0));
        }
        let law = self.max_law()?;
        // E[Z] = v_0 + sum_j (v_{j+1} - v_j) P[Z > v_j]
        let mut total = law[0].value;
        for w in law.windows(2) {
            total += (w[1].value - w[0].value) * w[0].survival;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String, InstanceError> {
        let file = match self {
            Instance::Discrete(vars) => InstanceFile {
                variables: Some(vars.clone()),
                iid_uniform: None,
            },
            Instance::IidUniform(n) => InstanceFile {
                variables: None,
                iid_uniform: Some(*n),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let inst = match (file.variables, file.iid_uniform) {
            (Some(vars), None) => Instance::Discrete(vars),
            (None, Some(n)) => Instance::IidUniform(n),
            (Some(_), Some(_)) => {
                return Err(InstanceError::Params(
                    "instance file has both `variables` and `iid_uniform`".into(),
                ))
            }
            (None, None) => {
                return Err(InstanceError::Params(
                    "instance file needs `variables` or `iid_uniform`".into(),
                ))
            }
        };
        inst.validate_with(FILE_MASS_TOL)?;
        Ok(inst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InstanceError> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn check_eps(eps: f64) -> Result<(), InstanceError> {
    if eps > 0.0 && eps < 0.25 {
        Ok(())
    } else {
        Err(InstanceError::Params(format!("eps must lie in (0, 1/4), got {eps}")))
    }
}

/// `X_1 = 1`, `X_2 = 1 + eps` w.p. `1/2 - eps`, `X_3 = 1/eps` w.p. `eps`.
pub fn build_gap_instance_m1(eps: f64) -> Result<Instance, InstanceError> {
    build_gap_instance(1, eps)
}

/// `m + 2` variables: `X_1 = 1`, `X_i = 1 + (i-1) eps` w.p. `1/2 - eps` for
/// `i = 2..=m+1`, and `X_{m+2} = 1/eps` w.p. `eps`.
pub fn build_gap_instance(m: usize, eps: f64) -> Result<Instance, InstanceError> {
    if m < 1 {
        return Err(InstanceError::Params("m must be >= 1".into()));
    }
    check_eps(eps)?;
    let mut vars = Vec::with_capacity(m + 2);
    vars.push(DiscreteVariable::constant(1.0));
    for i in 2..=m + 1 {
        vars.push(DiscreteVariable::new(vec![
            Atom::new(0.0, 0.5 + eps),
            Atom::new(1.0 + (i - 1) as f64 * eps, 0.5 - eps),
        ]));
    }
    vars.push(DiscreteVariable::two_point(1.0 / eps, eps));
    Ok(Instance::Discrete(vars))
}

/// `n + 2` variables: `X_1 = 1`, `n` indicators with `P[X_i = 1] = xi_m / n`,
/// and a tail `X_{n+2} = 1/eps` w.p. `eps`.
pub fn build_tightness_instance(m: usize, n: usize, eps: f64) -> Result<Instance, InstanceError> {
    let xi = mathkit::exponent(m)?.xi;
    if n < 1 {
        return Err(InstanceError::Params("n must be >= 1".into()));
    }
    let p = xi / n as f64;
    if p >= 1.0 {
        return Err(InstanceError::Params(format!(
            "xi_m / n = {p} must be < 1; increase n"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(InstanceError::Params(format!("eps must lie in (0, 1), got {eps}")));
    }
    let mut vars = Vec::with_capacity(n + 2);
    vars.push(DiscreteVariable::constant(1.0));
    vars.extend((0..n).map(|_| DiscreteVariable::two_point(1.0, p)));
    vars.push(DiscreteVariable::two_point(1.0 / eps, eps));
    Ok(Instance::Discrete(vars))
}

/// Parameters of the two-valued instance family: `n` middle variables with
/// `P[X_i > 0] = c1 / n` and a tail worth `c2 / eps` w.p. `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub m: usize,
    pub n: usize,
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
}

impl FamilyParams {
    pub fn new(m: usize, n: usize, eps: f64, c1: f64, c2: f64) -> Self {
        Self { m, n, eps, c1, c2 }
    }

    /// `c1 = xi_m`, `c2 = m! / xi_m^m`.
    pub fn canonical(m: usize, n: usize, eps: f64) -> Result<Self, InstanceError> {
        let e = mathkit::exponent(m)?;
        Ok(Self::new(m, n, eps, e.xi, e.psi))
    }

    /// Increment between consecutive middle values: 1e-12, shrunk so the
    /// largest middle value stays within 1e-6 of one.
    pub fn default_value_step(&self) -> f64 {
        (1e-6 / self.n.max(1) as f64).min(1e-12)
    }

    pub fn middle_prob(&self) -> f64 {
        self.c1 / self.n as f64
    }

    pub fn tail_value(&self) -> f64 {
        self.c2 / self.eps
    }

    pub fn validate(&self, value_step: f64) -> Result<(), InstanceError> {
        let bad = |msg: String| Err(InstanceError::Params(msg));
        if self.m < 1 {
            return bad("m must be >= 1".into());
        }
        if self.n < 1 {
            return bad("n must be >= 1".into());
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.c1 > 0.0) || !(self.middle_prob() < 1.0) {
            return bad(format!("c1 / n = {} must lie in (0, 1)", self.middle_prob()));
        }
        if !(self.c2 > 0.0) {
            return bad(format!("c2 must be > 0, got {}", self.c2));
        }
        if !(value_step > 0.0) {
            return bad(format!("value step must be > 0, got {value_step}"));
        }
        let top_middle = 1.0 + self.n as f64 * value_step;
        if !(self.tail_value() > top_middle) {
            return bad(format!(
                "tail value c2/eps = {} must exceed the largest middle value {top_middle}",
                self.tail_value()
            ));
        }
        Ok(())
    }

    /// Values `b_1..b_{n+2}` with `b_1 = 1`, `b_i = 1 + step (i - 1)`,
    /// `b_{n+2} = c2 / eps`.
    pub fn values(&self, value_step: f64) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.n + 2);
        b.push(1.0);
        b.extend((2..=self.n + 1).map(|i| 1.0 + value_step * (i - 1) as f64));
        b.push(self.tail_value());
        b
    }

    /// Probabilities of the positive atoms, aligned with [`Self::values`].
    pub fn probs(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n + 2);
        p.push(1.0);
        p.extend(std::iter::repeat_n(self.middle_prob(), self.n));
        p.push(self.eps);
        p
    }
}

pub fn build_appendix_instance(
    params: &FamilyParams,
    value_step: f64,
) -> Result<Instance, InstanceError> {
    params.validate(value_step)?;
    let vars = params
        .values(value_step)
        .into_iter()
        .zip(params.probs())
        .map(|(b, p)| DiscreteVariable::two_point(b, p))
        .collect();
    Ok(Instance::Discrete(vars))
}

/// Draws realizations of an instance.
///
/// Consecutive variables with identical, mostly-zero laws are sampled by
/// geometric skipping over the zeros; everything else by inverse CDF.
#[derive(Debug, Clone)]
pub struct Sampler {
    len: usize,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
enum Block {
    Constant {
        index: usize,
        value: f64,
    },
    Inverse {
        index: usize,
        cdf: Vec<f64>,
        values: Vec<f64>,
    },
    Sparse {
        start: usize,
        /// `ln(1 - r)` with `r = P[X > 0]`.
        log_zero: f64,
        /// Conditional CDF over the positive atoms, shared by the run.
        cond_cdf: Vec<f64>,
        /// Positive atom values, one row per variable in the run.
        values: Vec<Vec<f64>>,
    },
    Uniform {
        len: usize,
    },
}

const SPARSE_MIN_RUN: usize = 4;

fn inverse_cdf(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = probs
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = f64::INFINITY;
    }
    cdf
}

fn pick(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

fn sparse_key(var: &DiscreteVariable) -> Option<Vec<u64>> {
    let first = var.atoms.first()?;
    (var.atoms.len() >= 2 && first.value == 0.0 && first.prob >= 0.5)
        .then(|| var.atoms.iter().map(|a| a.prob.to_bits()).collect())
}

impl Sampler {
    pub fn new(instance: &Instance) -> Self {
        let vars = match instance {
            Instance::IidUniform(n) => {
                return Self {
                    len: *n,
                    blocks: vec![Block::Uniform { len: *n }],
                }
            }
            Instance::Discrete(vars) => vars,
        };
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < vars.len() {
            if let Some(key) = sparse_key(&vars[i]) {
                let mut end = i + 1;
                while end < vars.len() && sparse_key(&vars[end]).as_ref() == Some(&key) {
                    end += 1;
                }
                if end - i >= SPARSE_MIN_RUN {
                    let zero = vars[i].atoms[0].prob;
                    let r = 1.0 - zero;
                    blocks.push(Block::Sparse {
                        start: i,
                        log_zero: (-r).ln_1p(),
                        cond_cdf: inverse_cdf(vars[i].atoms[1..].iter().map(|a| a.prob / r)),
                        values: vars[i..end]
                            .iter()
                            .map(|v| v.atoms[1..].iter().map(|a| a.value).collect())
                            .collect(),
                    });
                    i = end;
                    continue;
                }
            }
            let var = &vars[i];
            if var.is_deterministic() {
                blocks.push(Block::Constant {
                    index: i,
                    value: var.atoms[0].value,
                });
            } else {
                blocks.push(Block::Inverse {
                    index: i,
                    cdf: inverse_cdf(var.atoms.iter().map(|a| a.prob)),
                    values: var.atoms.iter().map(|a| a.value).collect(),
                });
            }
            i += 1;
        }
        Self {
            len: vars.len(),
            blocks,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Overwrite `out` with a fresh realization in natural order.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.resize(self.len, 0.0);
        for block in &self.blocks {
            match block {
                Block::Constant { index, value } => out[*index] = *value,
                Block::Inverse { index, cdf, values } => {
                    out[*index] = values[pick(cdf, rng.random::<f64>())];
                }
                Block::Uniform { len } => {
                    for slot in &mut out[..*len] {
                        *slot = rng.random::<f64>();
                    }
                }
                Block::Sparse {
                    start,
                    log_zero,
                    cond_cdf,
                    values,
                } => {
                    let run = &mut out[*start..*start + values.len()];
                    run.fill(0.0);
                    let mut j = 0usize;
                    loop {
                        // Number of zeros before the next positive draw.
                        let u = 1.0 - rng.random::<f64>();
                        let gap = (u.ln() / log_zero).floor();
                        if !(gap < (values.len() - j) as f64) {
                            break;
                        }
                        j += gap as usize;
                        let row = &values[j];
                        run[j] = if row.len() == 1 {
                            row[0]
                        } else {
                            row[pick(cond_cdf, rng.random::<f64>())]
                        };
                        j += 1;
                        if j >= values.len() {
                            break;
                        }
                    }
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        self.sample_into(rng, &mut out);
        out
    }
}
