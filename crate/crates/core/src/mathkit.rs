//! Special functions and the exponent sequence.
//!
//! The regularized upper incomplete gamma function only ever appears here with
//! an integer shape, so it is evaluated as the finite Poisson sum
//! `Q_a(x) = e^{-x} * sum_{j<a} x^j / j!`. Every factorial and power is taken in
//! the log domain so shapes in the hundreds do not overflow.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::MathError;

/// Default `|h(xi)|` tolerance for the exponent solver.
pub const DEFAULT_XI_TOL: f64 = 1e-12;

/// Residual Poisson mass below which the Le Cam comparison stops summing.
pub const POISSON_TAIL_CUTOFF: f64 = 1e-15;

const LOG_FACTORIAL_TABLE_LEN: usize = 1024;

fn log_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(LOG_FACTORIAL_TABLE_LEN);
        let mut acc = 0.0_f64;
        table.push(0.0);
        for k in 1..LOG_FACTORIAL_TABLE_LEN {
            acc += (k as f64).ln();
            table.push(acc);
        }
        table
    })
}

/// `ln(n!)`.
///
/// Tabulated below 1024; above that the Stirling series with three correction
/// terms is already accurate to well below one ulp.
pub fn log_factorial(n: usize) -> f64 {
    if n < LOG_FACTORIAL_TABLE_LEN {
        return log_factorial_table()[n];
    }
    let x = n as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ln Gamma(x) for x = n + 1.
    (x - 0.5) * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

fn check_shape(a: usize, x: f64) -> Result<(), MathError> {
    if a < 1 {
        return Err(MathError::Domain(format!("shape must be >= 1, got {a}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(MathError::Domain(format!(
            "argument must be finite and >= 0, got {x}"
        )));
    }
    Ok(())
}

/// Regularized upper incomplete gamma with integer shape:
/// `Q_a(x) = Gamma(a, x) / (a-1)! = e^{-x} sum_{j=0}^{a-1} x^j / j!`.
pub fn q_upper(a: usize, x: f64) -> Result<f64, MathError> {
    check_shape(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    let lx = x.ln();
    // Log-sum-exp over the Poisson terms.
    let log_term = |j: usize| j as f64 * lx - log_factorial(j) - x;
    let peak = (0..a).map(log_term).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = (0..a).map(|j| (log_term(j) - peak).exp()).sum();
    Ok((peak + sum.ln()).exp().clamp(0.0, 1.0))
}

/// `d/dx Q_a(x) = -e^{-x} x^{a-1} / (a-1)!`.
pub fn q_upper_derivative(a: usize, x: f64) -> Result<f64, MathError> {
    check_shape(a, x)?;
    let k = a - 1;
    if k == 0 {
        return Ok(-(-x).exp());
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(-(k as f64 * x.ln() - log_factorial(k) - x).exp())
}

/// `ln sum_{k > m} x^k / k!`, the Poisson tail beyond `m` without the `e^{-x}`.
///
/// Used by the exponent solver: `h(x) = e^{-x} (1 - T(x))`, so the root of `h`
/// is the point where this log crosses zero, which stays well conditioned even
/// when `1 - e^{-x}` rounds to one.
fn log_poisson_tail_unscaled(m: usize, x: f64) -> f64 {
    let first = m + 1;
    let lead = first as f64 * x.ln() - log_factorial(first);
    // sum_{i>=0} prod_{r=1..i} x / (first + r)
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut k = first;
    loop {
        k += 1;
        term *= x / k as f64;
        sum += term;
        if term < sum * 1e-17 && (k as f64) > x {
            break;
        }
    }
    lead + sum.ln()
}

/// `h(x) = Q_{m+1}(x) - 1 + e^{-x}`, evaluated as `e^{-x} (1 - T(x))`.
pub fn exponent_residual(m: usize, x: f64) -> f64 {
    let log_tail = log_poisson_tail_unscaled(m, x);
    (-x).exp() * -log_tail.exp_m1()
}

/// Exponent `xi_m` and the constants derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentEntry {
    pub m: usize,
    pub xi: f64,
    /// `1 - e^{-xi}`.
    pub target: f64,
    /// `(m!)^{1/m}`.
    pub bracket_low: f64,
    /// `((m+1)!)^{1/(m+1)}`.
    pub bracket_high: f64,
    /// `m! / xi^m`.
    pub psi: f64,
}

/// Solve `Q_{m+1}(x) = 1 - e^{-x}` for its unique positive root by bisection
/// on `((m!)^{1/m}, ((m+1)!)^{1/(m+1)})`.
pub fn solve_xi(m: usize, tol: f64) -> Result<ExponentEntry, MathError> {
    if m < 1 {
        return Err(MathError::Domain(format!("m must be >= 1, got {m}")));
    }
    if !(tol > 0.0) {
        return Err(MathError::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    let low0 = (log_factorial(m) / m as f64).exp();
    let high0 = (log_factorial(m + 1) / (m + 1) as f64).exp();

    // sign(h) = -sign(ln T); h decreases through zero.
    let g = |x: f64| log_poisson_tail_unscaled(m, x);
    let (g_low, g_high) = (g(low0), g(high0));
    if !(g_low < 0.0 && g_high > 0.0) {
        return Err(MathError::Numerical(format!(
            "exponent residual does not change sign on [{low0}, {high0}] for m = {m}"
        )));
    }

    let (mut low, mut high) = (low0, high0);
    for _ in 0..200 {
        let mid = 0.5 * (low + high);
        if mid <= low || mid >= high {
            break;
        }
        if g(mid) < 0.0 {
            low = mid;
        } else {
            high = mid;
        }
    }
    let xi = if g(high).abs() < g(low).abs() { high } else { low };
    let residual = exponent_residual(m, xi);
    if residual.abs() > tol {
        return Err(MathError::Numerical(format!(
            "bisection stalled for m = {m}: |h(xi)| = {residual:e} > {tol:e}"
        )));
    }

    Ok(ExponentEntry {
        m,
        xi,
        target: -(-xi).exp_m1(),
        bracket_low: low0,
        bracket_high: high0,
        psi: (log_factorial(m) - m as f64 * xi.ln()).exp(),
    })
}

fn xi_cache() -> &'static RwLock<HashMap<usize, ExponentEntry>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, ExponentEntry>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Cached [`solve_xi`] at [`DEFAULT_XI_TOL`].
pub fn exponent(m: usize) -> Result<ExponentEntry, MathError> {
    if let Some(entry) = xi_cache().read().expect("xi cache poisoned").get(&m) {
        return Ok(*entry);
    }
    let entry = solve_xi(m, DEFAULT_XI_TOL)?;
    xi_cache()
        .write()
        .expect("xi cache poisoned")
        .insert(m, entry);
    Ok(entry)
}

/// `lambda^k e^{-lambda} / k!`.
pub fn poisson_pmf(rate: f64, k: usize) -> Result<f64, MathError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(MathError::Domain(format!("Poisson rate must be > 0, got {rate}")));
    }
    Ok((k as f64 * rate.ln() - rate - log_factorial(k)).exp())
}

fn check_probabilities(ps: &[f64]) -> Result<(), MathError> {
    match ps.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(i) => Err(MathError::Domain(format!(
            "probability {i} is {} which is outside [0, 1]",
            ps[i]
        ))),
        None => Ok(()),
    }
}

/// Exact law of a sum of independent Bernoulli(`ps[i]`) variables, by
/// iterative convolution. Entry `k` is `P[S = k]`.
pub fn poisson_binomial_pmf(ps: &[f64]) -> Result<Vec<f64>, MathError> {
    check_probabilities(ps)?;
    let mut pmf = Vec::with_capacity(ps.len() + 1);
    pmf.push(1.0);
    for &p in ps {
        pmf.push(0.0);
        for k in (1..pmf.len()).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    Ok(pmf)
}

/// Outcome of [`le_cam_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeCam {
    /// `sum_k |P[S = k] - Pois(lambda)(k)|` with `lambda = sum p`.
    pub tv_distance: f64,
    /// `2 sum p^2`.
    pub bound: f64,
}

/// Compare the Poisson-binomial law of `ps` with the Poisson law of the same
/// mean. The Poisson tail past `ps.len()` is summed until its residual mass
/// drops below [`POISSON_TAIL_CUTOFF`].
pub fn le_cam_check(ps: &[f64]) -> Result<LeCam, MathError> {
    let pb = poisson_binomial_pmf(ps)?;
    let lambda: f64 = ps.iter().sum();
    let bound = 2.0 * ps.iter().map(|p| p * p).sum::<f64>();

    let pois = |k: usize| -> f64 {
        if lambda == 0.0 {
            if k == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (k as f64 * lambda.ln() - lambda - log_factorial(k)).exp()
        }
    };

    let mut tv = 0.0;
    let mut covered = 0.0;
    for (k, &mass) in pb.iter().enumerate() {
        let q = pois(k);
        covered += q;
        tv += (mass - q).abs();
    }
    let mut k = pb.len();
    while 1.0 - covered > POISSON_TAIL_CUTOFF && k < pb.len() + 10_000 {
        let q = pois(k);
        covered += q;
        tv += q;
        k += 1;
        if q == 0.0 && k as f64 > lambda {
            break;
        }
    }
    Ok(LeCam {
        tv_distance: tv,
        bound,
    })
}

/// The five Chernoff tail bounds for a sum of independent indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChernoffVariant {
    /// `P[Y >= (1+d)mu] <= (e^d / (1+d)^{1+d})^mu`, `d >= 0`.
    UpperExact,
    /// `P[Y <= (1-d)mu] <= (e^{-d} / (1-d)^{1-d})^mu`, `d >= 0`.
    LowerExact,
    /// `P[Y >= (1+d)mu] <= e^{-mu d^2 / 3}`, `d in (0, 1]`.
    UpperQuadratic,
    /// `P[Y <= (1-d)mu] <= e^{-mu d^2 / 2}`, `d in (0, 1]`.
    LowerQuadratic,
    /// `P[Y >= (1+d)mu] < e^{-mu d ln(d) / 2}`, `d > e^2`.
    UpperLarge,
}

/// Closed-form value of the chosen Chernoff bound.
pub fn chernoff_bound(mu: f64, delta: f64, variant: ChernoffVariant) -> Result<f64, MathError> {
    use ChernoffVariant::*;
    if !(mu > 0.0) {
        return Err(MathError::Domain(format!("mu must be > 0, got {mu}")));
    }
    let in_unit = delta > 0.0 && delta <= 1.0;
    let ok = match variant {
        UpperExact | LowerExact => delta >= 0.0,
        UpperQuadratic | LowerQuadratic => in_unit,
        UpperLarge => delta > std::f64::consts::E * std::f64::consts::E,
    };
    if !ok || !delta.is_finite() {
        return Err(MathError::Domain(format!(
            "delta = {delta} is outside the range of {variant:?}"
        )));
    }
    let log_bound = match variant {
        UpperExact => mu * (delta - (1.0 + delta) * delta.ln_1p()),
        LowerExact => {
            if delta > 1.0 {
                // P[Y <= negative] = 0 for a nonnegative sum.
                return Ok(0.0);
            }
            let tail = if delta == 1.0 {
                0.0
            } else {
                (1.0 - delta) * (-delta).ln_1p()
            };
            mu * (-delta - tail)
        }
        UpperQuadratic => -mu * delta * delta / 3.0,
        LowerQuadratic => -mu * delta * delta / 2.0,
        UpperLarge => -mu * delta * delta.ln() / 2.0,
    };
    Ok(log_bound.exp())
}

/// `f(k, m) = sum_{j=1}^k xi_m^j/j! - sum_{j=m+1}^{m+k} xi_m^j/j!`.
pub fn poisson_balance(k: usize, m: usize) -> Result<f64, MathError> {
    let xi = exponent(m)?.xi;
    let lx = xi.ln();
    let term = |j: usize| (j as f64 * lx - log_factorial(j)).exp();
    Ok((1..=k).map(|j| term(j) - term(m + j)).sum())
}

/// Closed-form lower bound on the success probability of the one-query
/// threshold rule on `n` iid draws when `q` of them are expected above the
/// threshold:
/// `q (1 - q/n)^(n-1) + e^-q sum_{i=2}^n q^i (1 + H_{i-1}) / (i! i) - 2q/n`.
pub fn pbm_lower_bound(q: f64, n: usize) -> Result<f64, MathError> {
    if !(q > 0.0 && q < n as f64) || n < 2 {
        return Err(MathError::Domain(format!(
            "need n >= 2 and 0 < q < n, got q = {q}, n = {n}"
        )));
    }
    let lq = q.ln();
    let mut harmonic = 1.0; // H_{i-1} for i = 2
    let mut series = 0.0;
    for i in 2..=n {
        let log_term = i as f64 * lq - log_factorial(i) - (i as f64).ln();
        if log_term < -800.0 && i as f64 > q {
            break;
        }
        series += log_term.exp() * (1.0 + harmonic);
        harmonic += 1.0 / i as f64;
    }
    let n = n as f64;
    Ok(q * ((n - 1.0) * (-q / n).ln_1p()).exp() + (-q).exp() * series - 2.0 * q / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_factorial_small_values() {
        assert_eq!(log_factorial(0), 0.0);
        assert_eq!(log_factorial(1), 0.0);
        assert!(close(log_factorial(5), 120f64.ln(), 1e-14));
    }

    #[test]
    fn log_factorial_table_and_stirling_agree() {
        // Table entry 1023 plus ln(1024) must equal the Stirling value at 1024.
        let direct = log_factorial(1023) + 1024f64.ln();
        let stirling = log_factorial(1024);
        assert!((direct - stirling).abs() / stirling < 1e-12);
        let direct = log_factorial(2000);
        let by_sum: f64 = log_factorial(1023) + (1024..=2000).map(|k| (k as f64).ln()).sum::<f64>();
        assert!((direct - by_sum).abs() / direct < 1e-12);
    }

    #[test]
    fn q_upper_examples() {
        assert_eq!(q_upper(5, 0.0).unwrap(), 1.0);
        assert!(close(q_upper(1, 2f64.ln()).unwrap(), 0.5, 1e-15));
        let xi1 = exponent(1).unwrap().xi;
        assert!(close(q_upper(2, xi1).unwrap(), 0.682, 0.001));
    }

    #[test]
    fn q_upper_domain_errors() {
        assert!(q_upper(0, 1.0).is_err());
        assert!(q_upper(3, -0.5).is_err());
        assert!(q_upper_derivative(0, 1.0).is_err());
        assert!(q_upper_derivative(2, -1.0).is_err());
    }

    #[test]
    fn q_upper_large_shape_does_not_overflow() {
        let q = q_upper(501, 600.0).unwrap();
        assert!(q > 0.0 && q < 1e-3);
        let q = q_upper(501, 100.0).unwrap();
        assert!(close(q, 1.0, 1e-12));
    }

    #[test]
    fn q_upper_derivative_examples() {
        assert_eq!(q_upper_derivative(1, 0.0).unwrap(), -1.0);
        assert_eq!(q_upper_derivative(3, 0.0).unwrap(), 0.0);
        assert!(close(q_upper_derivative(2, 1.0).unwrap(), -(-1f64).exp(), 1e-15));
    }

    #[test]
    fn solve_xi_examples() {
        let e1 = solve_xi(1, 1e-12).unwrap();
        assert!(close(e1.xi, 1.1462, 1e-4));
        assert!(close(e1.target, 0.682, 0.001));
        assert!(close(solve_xi(2, 1e-12).unwrap().target, 0.792, 0.001));
        assert!(close(solve_xi(11, 1e-12).unwrap().target, 0.994, 0.001));
    }

    #[test]
    fn solve_xi_rejects_bad_input() {
        assert!(solve_xi(0, 1e-12).is_err());
        assert!(solve_xi(3, 0.0).is_err());
    }

    #[test]
    fn exponent_entry_invariants_hold_for_small_m() {
        for m in 1..=40 {
            let e = exponent(m).unwrap();
            assert!(e.bracket_low < e.xi && e.xi < e.bracket_high, "m = {m}");
            assert!(close(e.target, 1.0 - (-e.xi).exp(), 1e-12));
            assert!(e.psi < 1.0 && e.psi > 0.0);
            assert!(exponent_residual(m, e.xi).abs() <= DEFAULT_XI_TOL);
        }
    }

    #[test]
    fn xi_between_m_over_e_squared_and_m_except_first() {
        // xi_1 ~ 1.146 exceeds m = 1; the upper bound holds from m = 2 on.
        let e1 = exponent(1).unwrap();
        assert!(e1.xi > 1.0);
        for m in 2..=200 {
            let xi = exponent(m).unwrap().xi;
            let mf = m as f64;
            assert!(mf / std::f64::consts::E.powi(2) <= xi && xi <= mf, "m = {m}");
        }
    }

    #[test]
    fn poisson_pmf_examples() {
        assert!(close(poisson_pmf(1.0, 0).unwrap(), (-1f64).exp(), 1e-15));
        assert!(close(poisson_pmf(2.0, 2).unwrap(), 2.0 * (-2f64).exp(), 1e-15));
        let xi1 = exponent(1).unwrap().xi;
        let total: f64 = (0..60).map(|k| poisson_pmf(xi1, k).unwrap()).sum();
        assert!(close(total, 1.0, 1e-12));
        assert!(poisson_pmf(0.0, 1).is_err());
        assert!(poisson_pmf(-1.0, 1).is_err());
    }

    #[test]
    fn poisson_binomial_small_cases() {
        assert_eq!(poisson_binomial_pmf(&[0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(poisson_binomial_pmf(&[0.5, 0.5]).unwrap(), vec![0.25, 0.5, 0.25]);
        assert_eq!(poisson_binomial_pmf(&[]).unwrap(), vec![1.0]);
        assert!(poisson_binomial_pmf(&[0.2, 1.5]).is_err());
        assert!(poisson_binomial_pmf(&[-0.1]).is_err());
    }

    #[test]
    fn le_cam_examples() {
        let r = le_cam_check(&[0.0]).unwrap();
        assert_eq!(r.tv_distance, 0.0);
        assert_eq!(r.bound, 0.0);

        let r = le_cam_check(&[0.5, 0.5]).unwrap();
        assert_eq!(r.bound, 1.0);
        assert!(r.tv_distance <= r.bound);

        let r = le_cam_check(&[0.05; 20]).unwrap();
        assert!(close(r.bound, 0.1, 1e-15));
        assert!(r.tv_distance <= 0.1);
    }

    #[test]
    fn chernoff_examples() {
        use ChernoffVariant::*;
        let e_inv = (-1f64).exp();
        assert!(close(chernoff_bound(3.0, 1.0, UpperQuadratic).unwrap(), e_inv, 1e-15));
        assert!(close(chernoff_bound(2.0, 1.0, LowerQuadratic).unwrap(), e_inv, 1e-15));
        assert!(close(chernoff_bound(1.0, 0.0, UpperExact).unwrap(), 1.0, 1e-15));
        assert!(close(chernoff_bound(1.0, 0.0, LowerExact).unwrap(), 1.0, 1e-15));
        assert!(close(chernoff_bound(2.0, 1.0, LowerExact).unwrap(), (-2f64).exp(), 1e-15));
        assert_eq!(chernoff_bound(2.0, 1.5, LowerExact).unwrap(), 0.0);
        let v = chernoff_bound(1.0, 10.0, UpperLarge).unwrap();
        assert!(close(v, (-5.0 * 10f64.ln()).exp(), 1e-15));
    }

    #[test]
    fn chernoff_domains() {
        use ChernoffVariant::*;
        assert!(chernoff_bound(1.0, -0.1, UpperExact).is_err());
        assert!(chernoff_bound(1.0, -0.1, LowerExact).is_err());
        assert!(chernoff_bound(1.0, 0.0, UpperQuadratic).is_err());
        assert!(chernoff_bound(1.0, 1.2, LowerQuadratic).is_err());
        assert!(chernoff_bound(1.0, 7.0, UpperLarge).is_err());
        assert!(chernoff_bound(0.0, 0.5, UpperQuadratic).is_err());
    }

    #[test]
    fn poisson_balance_examples() {
        assert_eq!(poisson_balance(0, 3).unwrap(), 0.0);
        let xi1 = exponent(1).unwrap().xi;
        let f11 = poisson_balance(1, 1).unwrap();
        assert!(close(f11, xi1 - xi1 * xi1 / 2.0, 1e-14));
        assert!(close(f11, 0.489, 0.001));
        assert!(poisson_balance(5, 2).unwrap() >= 0.0);
    }

    /// Direct evaluation of the same sum with explicit factorials.
    fn pbm_bound_naive(q: f64, n: usize) -> f64 {
        let mut fact = 1.0;
        let mut sum = 0.0;
        for i in 2..=n {
            fact *= i as f64;
            let h: f64 = (1..i).map(|j| 1.0 / j as f64).sum();
            sum += q.powi(i as i32) * (1.0 + h) / (fact * i as f64);
        }
        q * (1.0 - q / n as f64).powi(n as i32 - 1) + (-q).exp() * sum - 2.0 * q / n as f64
    }

    #[test]
    fn pbm_lower_bound_examples() {
        let v = pbm_lower_bound(2.0, 20).unwrap();
        assert!(v > 0.5801, "{v}");
        assert!(close(v, pbm_bound_naive(2.0, 20), 1e-12));
        assert!(close(pbm_lower_bound(2.435, 100).unwrap(), pbm_bound_naive(2.435, 100), 1e-12));
        assert!(pbm_lower_bound(2.435, 5000).unwrap() > 0.79);
        assert!(pbm_lower_bound(20.0, 20).is_err());
        assert!(pbm_lower_bound(0.0, 20).is_err());
    }
}
