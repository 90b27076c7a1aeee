use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{play, OracleSemantics, Ordering, Strategy};
use crate::error::EngineError;
use crate::instances::{Instance, Sampler};

/// Trials per aggregation block. Blocks are fixed by trial index, so the
/// reduction tree does not depend on how many workers run them.
pub const MC_BLOCK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: u64,
    pub mean_payoff: f64,
    pub pbm_estimate: f64,
    pub stderr_payoff: f64,
    pub stderr_pbm: f64,
    pub seed: u64,
    pub expected_max: f64,
    pub roe_estimate: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if other.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
        }
    }

    fn stderr(&self) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            (self.m2 / (self.count - 1.0) / self.count).sqrt()
        }
    }
}

/// RNG for trial `t` (1-based): the master seed selects the key, the trial
/// index the stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[allow(clippy::too_many_arguments)]
pub fn monte_carlo(
    instance: &Instance,
    ordering: &Ordering,
    strategy: &Strategy,
    budget: usize,
    semantics: OracleSemantics,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<SimReport, EngineError> {
    if trials == 0 {
        return Err(EngineError::Params("trials must be >= 1".into()));
    }
    if workers == 0 {
        return Err(EngineError::Params("workers must be >= 1".into()));
    }
    instance.validate()?;
    ordering.check(instance)?;
    let expected_max = instance.expected_max()?;
    let sampler = Sampler::new(instance);

    let run_block = |block: u64| {
        let first = block * MC_BLOCK + 1;
        let last = ((block + 1) * MC_BLOCK).min(trials);
        let mut values = Vec::with_capacity(sampler.len());
        let mut presented = Vec::with_capacity(sampler.len());
        let mut payoff = Moments::default();
        let mut hit = Moments::default();
        for t in first..=last {
            let mut rng = trial_rng(seed, t);
            sampler.sample_into(&mut rng, &mut values);
            let seq: &[f64] = if *ordering == Ordering::Natural {
                &values
            } else {
                ordering.present_into(&values, &mut presented);
                &presented
            };
            let r = play(seq, strategy, budget, semantics);
            payoff.push(r.payoff);
            hit.push(if r.is_max { 1.0 } else { 0.0 });
        }
        (payoff, hit)
    };

    let blocks = trials.div_ceil(MC_BLOCK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EngineError::Params(format!("thread pool: {e}")))?;
    let parts: Vec<(Moments, Moments)> =
        pool.install(|| (0..blocks).into_par_iter().map(run_block).collect());
    let (payoff, hit) = parts
        .into_iter()
        .fold((Moments::default(), Moments::default()), |(a, b), (c, d)| {
            (a.merge(c), b.merge(d))
        });

    Ok(SimReport {
        trials,
        mean_payoff: payoff.mean,
        pbm_estimate: hit.mean,
        stderr_payoff: payoff.stderr(),
        stderr_pbm: hit.stderr(),
        seed,
        expected_max,
        roe_estimate: payoff.mean / expected_max,
    })
}
