//! Acceptance suite. Each test prints one `ACn PASS|FAIL` line and then
//! asserts it; run with `--nocapture` to see the lines.

use std::time::{Duration, Instant};

use clap::Parser;
use prophet_oracle::dpopt::{self, Grid};
use prophet_oracle::engine::{
    self, Model, Objective, OracleSemantics, Ordering, QuerySet, SingleThreshold, Strategy,
};
use prophet_oracle::instances::{Atom, DiscreteVariable, FamilyParams, Instance};
use prophet_oracle::mathkit::{self, ChernoffVariant};
use prophet_oracle_cli::{
    cmd_dp, cmd_gap, cmd_pbm, cmd_simulate, cmd_xi, Cli, Command, DpRow, PbmRow,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, ok: bool, detail: String) {
    println!("AC{id} {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "AC{id} failed: {detail}");
}

fn parse(line: &str) -> Cli {
    Cli::try_parse_from(std::iter::once("prophet-oracle").chain(line.split_whitespace()))
        .unwrap_or_else(|e| panic!("`{line}`: {e}"))
}

fn dp(line: &str) -> DpRow {
    match parse(line).command {
        Command::Dp(a) => cmd_dp(&a).unwrap(),
        _ => unreachable!(),
    }
}

fn pbm(line: &str) -> PbmRow {
    let cli = parse(line);
    match cli.command {
        Command::Pbm(a) => cmd_pbm(&a, cli.workers).unwrap(),
        _ => unreachable!(),
    }
}

fn simulate(line: &str) -> engine::SimReport {
    let cli = parse(line);
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, cli.workers).unwrap(),
        _ => unreachable!(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

#[test]
fn ac01_exponent_table() {
    let want = [0.682, 0.792, 0.861, 0.907, 0.937, 0.958, 0.971, 0.980, 0.987, 0.991, 0.994];
    let start = Instant::now();
    let rows = match parse("xi --m-max 11").command {
        Command::Xi { m_max } => cmd_xi(m_max).unwrap(),
        _ => unreachable!(),
    };
    let took = start.elapsed();
    let worst = rows
        .iter()
        .zip(want)
        .map(|(r, w)| (r.target - w).abs())
        .fold(0.0, f64::max);
    report(
        1,
        rows.len() == 11 && worst <= 0.0005 && took < Duration::from_secs(1),
        format!("max |1-e^-xi - table| = {worst:.2e} (tol 5e-4), {}", secs(took)),
    );
}

#[test]
fn ac02_bracket_and_monotonicity() {
    let start = Instant::now();
    let mut ok = true;
    let mut prev = 0.0;
    for m in 1..=500 {
        let e = mathkit::solve_xi(m, mathkit::DEFAULT_XI_TOL).unwrap();
        let low = (mathkit::log_factorial(m) / m as f64).exp();
        let high = (mathkit::log_factorial(m + 1) / (m + 1) as f64).exp();
        ok &= low < e.xi && e.xi < high && e.xi > prev;
        prev = e.xi;
    }
    let drift = (prev / 500.0 - (-1.0f64).exp()).abs();
    let took = start.elapsed();
    report(
        2,
        ok && drift <= 0.01 && took < Duration::from_secs(5),
        format!("bracket+monotone over 1..=500: {ok}, |xi_500/500 - 1/e| = {drift:.4}, {}", secs(took)),
    );
}

#[test]
fn ac03_optimal_dp_table() {
    let table = [
        (1, 1.146, 0.872, 0.682),
        (2, 1.685, 0.779, 0.792),
        (3, 2.054, 0.808, 0.863),
        (4, 3.250, 0.682, 0.909),
        (5, 3.696, 0.651, 0.939),
        (6, 3.826, 0.628, 0.959),
        (7, 4.330, 0.612, 0.973),
        (8, 4.195, 0.682, 0.982),
        (9, 5.234, 0.580, 0.988),
        (10, 5.854, 0.571, 0.992),
        (11, 6.131, 0.563, 0.994),
    ];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (m, c1, c2, opt) in table {
        let row = dp(&format!("dp --m {m} --n 10000 --eps 1e-9 --c1 {c1} --c2 {c2}"));
        worst = worst.max((row.opt_ratio - opt).abs());
    }
    let took = start.elapsed();
    report(
        3,
        worst <= 0.005 && took < Duration::from_secs(120),
        format!("max |OPT - table| = {worst:.4} (tol 0.005), {}", secs(took)),
    );
}

#[test]
fn ac04_single_threshold_tightness() {
    let start = Instant::now();
    let mut worst_single: f64 = 0.0;
    for m in 1..=3 {
        let row = dp(&format!("dp --m {m} --n 10000 --eps 1e-9"));
        worst_single = worst_single.max((row.single_threshold_ratio - row.target).abs());
    }
    let mut worst_gap: f64 = 0.0;
    let mut found = Vec::new();
    for (m, published) in [(1, 0.000000973), (3, 0.00178), (7, 0.00131)] {
        let d = dpopt::discrepancy(m, 10_000, 1e-9, &Grid::default(), 1).unwrap();
        worst_gap = worst_gap.max((d.difference - published).abs());
        found.push(format!("m={m}:{:.6}", d.difference));
    }
    let took = start.elapsed();
    report(
        4,
        worst_single <= 0.005 && worst_gap <= 0.0008 && took < Duration::from_secs(300),
        format!(
            "single-threshold dev {worst_single:.5} (tol 0.005), discrepancy [{}] dev {worst_gap:.5} (tol 8e-4), {}",
            found.join(" "),
            secs(took)
        ),
    );
}

#[test]
fn ac05_lower_bound_simulation() {
    let start = Instant::now();
    let mut ok = true;
    let mut found = Vec::new();
    for m in 1..=3 {
        let rep = simulate(&format!(
            "simulate --builder appendix --m {m} --n 2000 --eps 0.01 --strategy single-threshold \
             --oracle weak --ordering natural --trials 1000000 --seed 2024"
        ));
        let target = mathkit::exponent(m).unwrap().target;
        ok &= (rep.roe_estimate - target).abs() <= 0.02;
        found.push(format!("m={m}:{:.4}/{target:.4}", rep.roe_estimate));
    }
    let took = start.elapsed();
    report(
        5,
        ok && took < Duration::from_secs(120),
        format!("roe/target [{}] (tol 0.02), {}", found.join(" "), secs(took)),
    );
}

#[test]
fn ac06_query_set_closed_form() {
    let mut ok = true;
    let mut found = Vec::new();
    for m in 1..=2usize {
        let rep = simulate(&format!(
            "simulate --builder tightness --m {m} --n 2000 --eps 0.001 --strategy query-set \
             --ordering stack-nonzeros --oracle strict --trials 1000000 --seed 2024"
        ));
        let xi = mathkit::exponent(m).unwrap().xi;
        let closed = 1.0
            + (1..=m)
                .map(|i| mathkit::poisson_pmf(xi, i).unwrap())
                .sum::<f64>();
        let z = (rep.mean_payoff - closed) / rep.stderr_payoff;
        ok &= z.abs() <= 4.0;
        found.push(format!("m={m}: {:.4} vs {closed:.4} (z={z:.2})", rep.mean_payoff));
    }
    report(6, ok, format!("{} (tol 4 se)", found.join(", ")));
}

#[test]
fn ac07_gap_example() {
    let gap = |line: &str| match parse(line).command {
        Command::Gap(a) => cmd_gap(&a).unwrap(),
        _ => unreachable!(),
    };
    let g = gap("gap --m 1 --eps 0.01 --oracle strict");
    let eps: f64 = 0.01;
    // The lemma strategy's value and its Top-1 counterpart, in closed form.
    let lemma_exact = 1.5 + eps / 2.0 - eps * eps;
    let quotient_exact = lemma_exact / (2.0 - eps);
    let small = gap("gap --m 1 --eps 1e-4 --oracle strict");
    let checks = [
        (g.oracle_reference_value - 1.5049).abs() <= 1e-6,
        (g.top1_optimal_value - 1.99).abs() <= 1e-9,
        (g.expected_max - 1.994851).abs() <= 1e-9,
        (g.oracle_reference_ratio - 0.7543).abs() <= 1e-4,
        (g.reference_quotient - quotient_exact).abs() <= 1e-12,
        (small.oracle_reference_ratio - 0.750).abs() <= 0.001,
        (small.oracle_optimal_ratio - 0.750).abs() <= 0.001,
    ];
    report(
        7,
        checks.iter().all(|&c| c),
        format!(
            "oracle {:.7}, top1 {:.9}, E[max] {:.9}, oracle ratio {:.5}, quotient {:.5}, ratio at eps=1e-4 {:.5} (optimum {:.5}) {checks:?}",
            g.oracle_reference_value,
            g.top1_optimal_value,
            g.expected_max,
            g.oracle_reference_ratio,
            g.reference_quotient,
            small.oracle_reference_ratio,
            small.oracle_optimal_ratio,
        ),
    );
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..=5);
    let mut pool: Vec<f64> = (1..=40).map(|v| v as f64 / 2.0).collect();
    let vars = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=3);
            let mut values: Vec<f64> = (0..k)
                .map(|_| pool.swap_remove(rng.random_range(0..pool.len())))
                .collect();
            values.sort_by(f64::total_cmp);
            let raw: Vec<f64> = values.iter().map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let head: f64 = probs[..k - 1].iter().sum();
            probs[k - 1] = 1.0 - head;
            DiscreteVariable::new(values.into_iter().zip(probs).map(|(v, p)| Atom::new(v, p)).collect())
        })
        .collect();
    Instance::Discrete(vars)
}

#[test]
fn ac08_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let sem = OracleSemantics::Strict;
    let order = Ordering::Natural;
    let (mut pbm_gap, mut roe_excess): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for _ in 0..20 {
        let inst = random_instance(&mut rng);
        for m in 1..=2 {
            let opt = |model, obj| engine::exact_optimal(&inst, &order, model, obj, sem).unwrap();
            let oracle = Model::Oracle { budget: m };
            let top1 = Model::Top1 { capacity: m + 1 };
            pbm_gap = pbm_gap.max((opt(oracle, Objective::PbM) - opt(top1, Objective::PbM)).abs());
            roe_excess = roe_excess.max(opt(oracle, Objective::RoE) - opt(top1, Objective::RoE));
        }
    }
    let took = start.elapsed();
    report(
        8,
        pbm_gap <= 1e-9 && roe_excess <= 1e-9 && took < Duration::from_secs(120),
        format!(
            "max |PbM oracle - top1| = {pbm_gap:.1e}, max RoE oracle - top1 = {roe_excess:.3e}, {}",
            secs(took)
        ),
    );
}

#[test]
fn ac09_iid_pbm() {
    let row = pbm("pbm --n 5000 --q 2.435 --m 1 --trials 100000 --seed 2024");
    let formula = mathkit::pbm_lower_bound(2.0, 20).unwrap();
    report(
        9,
        row.pbm_estimate >= 0.785 && formula > 0.5801,
        format!(
            "estimate {:.4} +- {:.4} (need >= 0.785), formula(q=2, n=20) = {formula:.5} (need > 0.5801)",
            row.pbm_estimate, row.stderr_pbm
        ),
    );
}

#[test]
fn ac10_general_m_pbm() {
    let mut ok = true;
    let mut found = Vec::new();
    for m in [4usize, 6, 9] {
        let row = pbm(&format!("pbm --n 10000 --q auto --m {m} --trials 100000 --seed 2024"));
        let bound = (m as f64).powf(-(m as f64) / 5.0);
        ok &= row.failure_estimate <= bound + 3.0 * row.stderr_pbm;
        found.push(format!("m={m}: {:.5} <= {bound:.5}", row.failure_estimate));
    }
    report(10, ok, format!("failure {} (+3 se)", found.join(", ")));
}

#[test]
fn ac11_mathkit_properties() {
    let start = Instant::now();
    let mut failures = Vec::new();

    let h = 1e-5;
    for a in 1..=12 {
        let mut prev = 1.0 + 1e-15;
        for i in 0..200 {
            let x = i as f64 * 0.1;
            let q = mathkit::q_upper(a, x).unwrap();
            if q > prev + 1e-15 {
                failures.push(format!("Q_{a} rises at {x}"));
            }
            prev = q;
            if a > 1 && mathkit::q_upper(a - 1, x).unwrap() > q + 1e-15 {
                failures.push(format!("Q not increasing in shape at a={a} x={x}"));
            }
            if x > h {
                let fd = (mathkit::q_upper(a, x + h).unwrap() - mathkit::q_upper(a, x - h).unwrap()) / (2.0 * h);
                if (fd - mathkit::q_upper_derivative(a, x).unwrap()).abs() > 1e-7 {
                    failures.push(format!("dQ_{a}({x}) finite difference"));
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 0..=10 {
        let ps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let pmf = mathkit::poisson_binomial_pmf(&ps).unwrap();
        let mut brute = vec![0.0; n + 1];
        for mask in 0u32..(1 << n) {
            let mut w = 1.0;
            for (i, p) in ps.iter().enumerate() {
                w *= if mask >> i & 1 == 1 { *p } else { 1.0 - p };
            }
            brute[mask.count_ones() as usize] += w;
        }
        if pmf.iter().zip(&brute).any(|(a, b)| (a - b).abs() > 1e-12) {
            failures.push(format!("Poisson-binomial n={n}"));
        }
        let lc = mathkit::le_cam_check(&ps).unwrap();
        if lc.tv_distance > lc.bound + 1e-12 {
            failures.push(format!("Le Cam n={n}: {} > {}", lc.tv_distance, lc.bound));
        }
    }

    use ChernoffVariant::*;
    let domain_errors = [
        (0.0, 0.5, UpperExact),
        (1.0, -0.1, LowerExact),
        (1.0, 1.5, UpperQuadratic),
        (1.0, 0.0, LowerQuadratic),
        (1.0, 7.0, UpperLarge),
        (1.0, f64::NAN, UpperExact),
    ];
    for (mu, d, v) in domain_errors {
        if mathkit::chernoff_bound(mu, d, v).is_ok() {
            failures.push(format!("Chernoff {v:?} accepted mu={mu} delta={d}"));
        }
    }
    for (mu, d, v) in [(3.0, 0.5, UpperExact), (3.0, 0.5, LowerExact), (3.0, 1.0, UpperQuadratic), (3.0, 0.3, LowerQuadratic), (3.0, 8.0, UpperLarge)] {
        let b = mathkit::chernoff_bound(mu, d, v).unwrap();
        if !(0.0..=1.0).contains(&b) {
            failures.push(format!("Chernoff {v:?} = {b}"));
        }
    }

    for m in 1..=50 {
        for k in 1..=50 {
            let f = mathkit::poisson_balance(k, m).unwrap();
            if f < 0.0 {
                failures.push(format!("f({k}, {m}) = {f}"));
            }
        }
    }
    let took = start.elapsed();
    report(
        11,
        failures.is_empty() && took < Duration::from_secs(30),
        format!("{} failures {:?}, {}", failures.len(), failures.iter().take(3).collect::<Vec<_>>(), secs(took)),
    );
}

#[test]
fn ac12_determinism() {
    let params = FamilyParams::canonical(2, 300, 0.01).unwrap();
    let appendix =
        prophet_oracle::instances::build_appendix_instance(&params, params.default_value_step()).unwrap();
    let tightness = prophet_oracle::instances::build_tightness_instance(2, 300, 1e-3).unwrap();
    let cases: Vec<(Instance, Ordering, Strategy, usize)> = vec![
        (
            appendix,
            Ordering::Natural,
            Strategy::oracle(SingleThreshold::new(1.0).unwrap()),
            2,
        ),
        (tightness, Ordering::StackNonzeros, Strategy::oracle(QuerySet::new([1, 2])), 2),
        (
            Instance::IidUniform(200),
            Ordering::Natural,
            Strategy::oracle(engine::iid_pbm_strategy(2.435, 200).unwrap()),
            1,
        ),
    ];
    let mut ok = true;
    for (inst, order, strategy, budget) in &cases {
        let run = |workers| {
            engine::monte_carlo(inst, order, strategy, *budget, OracleSemantics::Strict, 10_000, 99, workers)
                .unwrap()
        };
        let base = serde_json::to_string(&run(1)).unwrap();
        for workers in [2, 3, 8] {
            ok &= serde_json::to_string(&run(workers)).unwrap() == base;
        }
    }
    let cli_runs: Vec<_> = [1, 4]
        .iter()
        .map(|w| {
            simulate(&format!(
                "simulate --builder gap --m 1 --eps 0.01 --strategy query-set --trials 20000 --seed 5 --workers {w}"
            ))
        })
        .collect();
    ok &= cli_runs[0] == cli_runs[1];
    report(12, ok, format!("{} configurations x worker counts 1,2,3,8 bit-identical: {ok}", cases.len() + 1));
}
