//! Unknown-variance exploration: a uniform warmup round estimates every σ,
//! then the known-variance engine runs on the remaining budget with the
//! estimates plugged in everywhere σ appears.

use rand::RngCore;

use super::{num_stages, run_exploration_with_model, AlgorithmSpec, ExplorationResult, VarianceKnowledge};
use crate::error::{Error, Result};
use crate::model::Instance;
use crate::rewards::RewardSource;

#[derive(Debug, Clone, PartialEq)]
pub struct Warmup {
    pub pulls_per_arm: u64,
    /// Square roots of the unbiased sample variances, rows by arm.
    pub stddevs: Vec<Vec<f64>>,
}

impl Warmup {
    pub fn total_pulls(&self) -> u64 {
        self.pulls_per_arm * self.stddevs.len() as u64
    }
}

/// Pulls every arm ⌊T/((A+1)·⌈log₂A⌉)⌋ times and estimates its standard
/// deviations. Needs at least two pulls per arm. For A ≤ 2 the divisor uses
/// two rounds instead of one, so that half of the budget remains.
pub fn warmup(instance: &Instance, budget: u64, source: &dyn RewardSource, rng: &mut dyn RngCore) -> Result<Warmup> {
    let arms = instance.num_arms();
    let rounds = num_stages(instance.num_treatments()).max(2) as u64;
    let n = budget / (arms as u64 * rounds);
    if n < 2 {
        return Err(Error::InsufficientBudget { arm: 0, stage_budget: budget });
    }
    let m = instance.num_metrics();
    let mut means = vec![0.0; m];
    let mut stddevs = Vec::with_capacity(arms);
    for arm in 0..arms {
        let mut var = vec![0.0; m];
        source.sample_moments(instance, arm, n, rng, &mut means, &mut var);
        let mut row = Vec::with_capacity(m);
        for (metric, v) in var.into_iter().enumerate() {
            let s = v.sqrt();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateVariance { arm, metric });
            }
            row.push(s);
        }
        stddevs.push(row);
    }
    Ok(Warmup { pulls_per_arm: n, stddevs })
}

/// SHRVar with estimated variances.
pub fn run_exploration_adaptive(
    instance: &Instance,
    budget: u64,
    source: &dyn RewardSource,
    rng: &mut dyn RngCore,
) -> Result<ExplorationResult> {
    run_adaptive(instance, AlgorithmSpec::SHRVAR_ADA, budget, source, rng)
}

pub(crate) fn run_adaptive(
    instance: &Instance,
    spec: AlgorithmSpec,
    budget: u64,
    source: &dyn RewardSource,
    rng: &mut dyn RngCore,
) -> Result<ExplorationResult> {
    let w = warmup(instance, budget, source, rng)?;
    let model = instance.with_stddevs(w.stddevs.clone())?;
    let known = AlgorithmSpec { variance_knowledge: VarianceKnowledge::Known, ..spec };
    let mut res = run_exploration_with_model(instance, &model, known, budget - w.total_pulls(), source, rng)?;
    res.warmup_pulls = w.total_pulls();
    res.total_pulls_used += w.total_pulls();
    Ok(res)
}
