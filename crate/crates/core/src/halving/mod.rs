//! Staged exploration: sequential halving on empirical z-values.
//!
//! Each of the ⌈log₂A⌉ stages spends ⌊T/⌈log₂A⌉⌋ pulls on control and the
//! surviving treatments, scores every survivor, and keeps the better
//! ⌈|A_s|/2⌉. The sampling rule and the elimination rule are independent
//! knobs, which is how the baselines are expressed.

pub mod adaptive;
pub mod elimination;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::alloc::{self, StageAllocation};
use crate::error::{Error, Result};
use crate::model::{validation_constant, Instance, CONTROL};
use crate::rewards::RewardSource;

pub use adaptive::{run_exploration_adaptive, warmup, Warmup};
pub use elimination::{confidence_bonus, confidence_eliminate, confidence_level, mean_eliminate, minz_eliminate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sampling {
    RelativeVariance,
    Uniform,
    Variance,
    Neyman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Elimination {
    /// Keep the largest min_i ẑ.
    MinZ,
    /// Keep the largest confidence level δ_s(a).
    Confidence,
    /// Keep the largest min_i μ̂. Classic halving on reward means, blind to
    /// control and to the validation test.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceKnowledge {
    Known,
    /// Estimate σ from a uniform warmup round first.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlgorithmSpec {
    pub sampling: Sampling,
    pub elimination: Elimination,
    pub variance_knowledge: VarianceKnowledge,
}

const fn spec(sampling: Sampling, elimination: Elimination, variance_knowledge: VarianceKnowledge) -> AlgorithmSpec {
    AlgorithmSpec { sampling, elimination, variance_knowledge }
}

use Elimination as E;
use Sampling as S;
use VarianceKnowledge as V;

const NAMED: &[(&str, AlgorithmSpec)] = &[
    ("shrvar", spec(S::RelativeVariance, E::MinZ, V::Known)),
    ("shrvar-c", spec(S::RelativeVariance, E::Confidence, V::Known)),
    ("shrvar-ada", spec(S::RelativeVariance, E::MinZ, V::Adaptive)),
    ("sh-z", spec(S::Uniform, E::MinZ, V::Known)),
    ("sh-c", spec(S::Uniform, E::Confidence, V::Known)),
    ("shvar-z", spec(S::Variance, E::MinZ, V::Known)),
    ("shvar-c", spec(S::Variance, E::Confidence, V::Known)),
    ("neyman-z", spec(S::Neyman, E::MinZ, V::Known)),
    ("sh", spec(S::Uniform, E::Mean, V::Known)),
    ("shvar", spec(S::Variance, E::Mean, V::Known)),
];

impl AlgorithmSpec {
    pub const SHRVAR: Self = NAMED[0].1;
    pub const SHRVAR_C: Self = NAMED[1].1;
    pub const SHRVAR_ADA: Self = NAMED[2].1;
    pub const SH_Z: Self = NAMED[3].1;
    pub const SH_C: Self = NAMED[4].1;
    pub const SHVAR_Z: Self = NAMED[5].1;
    pub const SHVAR_C: Self = NAMED[6].1;
    pub const NEYMAN_Z: Self = NAMED[7].1;
    pub const SH: Self = NAMED[8].1;
    pub const SHVAR: Self = NAMED[9].1;

    /// Every named algorithm, in menu order.
    pub fn all_named() -> impl Iterator<Item = (&'static str, AlgorithmSpec)> {
        NAMED.iter().copied()
    }

    /// Short name such as `shrvar-c`, or a descriptive fallback for
    /// combinations without one.
    pub fn name(&self) -> String {
        match NAMED.iter().find(|(_, s)| s == self) {
            Some((n, _)) => (*n).to_string(),
            None => format!("{:?}/{:?}/{:?}", self.sampling, self.elimination, self.variance_knowledge).to_lowercase(),
        }
    }
}

impl fmt::Display for AlgorithmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for AlgorithmSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        NAMED.iter().find(|(n, _)| *n == key).map(|(_, spec)| *spec).ok_or_else(|| {
            let menu: Vec<&str> = NAMED.iter().map(|(n, _)| *n).collect();
            Error::invalid(format!("unknown algorithm `{s}` (expected one of {})", menu.join(", ")))
        })
    }
}

/// Everything observed in one stage. Rows of the per-treatment vectors are
/// aligned with `active`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStats {
    pub active: Vec<usize>,
    pub pulls: StageAllocation,
    pub control_means: Vec<f64>,
    pub treatment_means: Vec<Vec<f64>>,
    pub empirical_z: Vec<Vec<f64>>,
    /// Var(ẑ) = ρ²/N(a) + λ²/N(0) for each active treatment and metric.
    pub variance_terms: Vec<Vec<f64>>,
}

impl StageStats {
    pub fn num_metrics(&self) -> usize {
        self.control_means.len()
    }

    pub fn row(&self, a: usize) -> Option<usize> {
        self.active.binary_search(&a).ok()
    }

    pub fn z(&self, a: usize, metric: usize) -> Option<f64> {
        self.row(a).map(|k| self.empirical_z[k][metric])
    }

    /// min_i ẑ for the treatment in row `k`.
    pub fn min_z(&self, k: usize) -> f64 {
        crate::model::min_of(&self.empirical_z[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationResult {
    pub recommended: usize,
    pub trail: Vec<StageStats>,
    /// Includes warmup pulls.
    pub total_pulls_used: u64,
    pub warmup_pulls: u64,
}

/// ⌈log₂A⌉, and one stage when A = 1.
pub fn num_stages(num_treatments: usize) -> usize {
    if num_treatments <= 1 {
        1
    } else {
        (usize::BITS - (num_treatments - 1).leading_zeros()) as usize
    }
}

/// Per-(treatment, metric) quantities that turn sample means into ẑ, computed
/// from whichever standard deviations the algorithm believes in.
pub(crate) struct Plugin {
    m: usize,
    xi: Vec<f64>,
    inv_scale: Vec<f64>,
    rho_sq: Vec<f64>,
    lambda_sq: Vec<f64>,
}

impl Plugin {
    pub(crate) fn new(model: &Instance) -> Self {
        let m = model.num_metrics();
        let cells = model.num_arms() * m;
        let (mut xi, mut inv_scale, mut rho_sq, mut lambda_sq) =
            (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
        for a in model.treatments() {
            for i in 0..m {
                let (sa, s0) = (model.stddev(a, i), model.stddev(CONTROL, i));
                let k = a * m + i;
                xi[k] = validation_constant(model.validation(), sa, s0, i).expect("metric in range");
                inv_scale[k] = (sa * sa + s0 * s0).sqrt().recip();
                (rho_sq[k], lambda_sq[k]) = model.relative_variance(a, i);
            }
        }
        Plugin { m, xi, inv_scale, rho_sq, lambda_sq }
    }

    fn stats(
        &self,
        active: Vec<usize>,
        pulls: StageAllocation,
        control_means: Vec<f64>,
        treatment_means: Vec<Vec<f64>>,
    ) -> StageStats {
        let n0 = pulls.control_pulls as f64;
        let mut empirical_z = Vec::with_capacity(active.len());
        let mut variance_terms = Vec::with_capacity(active.len());
        for (&a, mu) in active.iter().zip(&treatment_means) {
            let na = pulls.pulls(a) as f64;
            let base = a * self.m;
            empirical_z.push(
                (0..self.m)
                    .map(|i| (mu[i] - control_means[i]) * self.inv_scale[base + i] + self.xi[base + i])
                    .collect(),
            );
            variance_terms
                .push((0..self.m).map(|i| self.rho_sq[base + i] / na + self.lambda_sq[base + i] / n0).collect());
        }
        StageStats { active, pulls, control_means, treatment_means, empirical_z, variance_terms }
    }
}

/// Builds stage statistics from raw reward vectors. `samples[arm]` lists the
/// M-dimensional rewards observed for `arm`; control and every active
/// treatment need at least one.
pub fn empirical_z(
    instance: &Instance,
    active: &[usize],
    samples: &BTreeMap<usize, Vec<Vec<f64>>>,
) -> Result<StageStats> {
    alloc::check_active(instance, active)?;
    let m = instance.num_metrics();
    let mean_of = |arm: usize| -> Result<(u64, Vec<f64>)> {
        let rows = samples
            .get(&arm)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::InvalidState(format!("no samples for arm {arm}")))?;
        let mut sum = vec![0.0; m];
        for row in rows {
            if row.len() != m {
                return Err(Error::InvalidState(format!("sample for arm {arm} has {} metrics", row.len())));
            }
            sum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        let n = rows.len() as u64;
        Ok((n, sum.into_iter().map(|s| s / n as f64).collect()))
    };
    let (n0, control_means) = mean_of(CONTROL)?;
    let mut treatment_pulls = BTreeMap::new();
    let mut treatment_means = Vec::with_capacity(active.len());
    for &a in active {
        let (n, mu) = mean_of(a)?;
        treatment_pulls.insert(a, n);
        treatment_means.push(mu);
    }
    let total = n0 + treatment_pulls.values().sum::<u64>();
    let pulls = StageAllocation { control_pulls: n0, treatment_pulls, stage_budget: total };
    Ok(Plugin::new(instance).stats(active.to_vec(), pulls, control_means, treatment_means))
}

/// The formulas can round an arm down to zero pulls (SHRVar's control share
/// vanishes once only high-variance treatments remain); such arms get one
/// pull so that every estimate stays defined.
const MIN_ONE: alloc::Rounding = alloc::Rounding::MinOnePull;

fn allocate(sampling: Sampling, model: &Instance, active: &[usize], budget: u64) -> Result<StageAllocation> {
    match sampling {
        Sampling::RelativeVariance => alloc::shrvar_allocation_with(model, active, budget, MIN_ONE),
        Sampling::Uniform => alloc::uniform_allocation(active, budget),
        Sampling::Variance => alloc::variance_allocation_with(model, active, budget, MIN_ONE),
        Sampling::Neyman => alloc::neyman_allocation_with(model, active, budget, MIN_ONE),
    }
}

/// Runs the exploration phase and returns the recommended treatment with a
/// full per-stage audit trail.
pub fn run_exploration(
    instance: &Instance,
    spec: AlgorithmSpec,
    budget: u64,
    source: &dyn RewardSource,
    rng: &mut dyn RngCore,
) -> Result<ExplorationResult> {
    match spec.variance_knowledge {
        VarianceKnowledge::Known => run_exploration_with_model(instance, instance, spec, budget, source, rng),
        VarianceKnowledge::Adaptive => adaptive::run_adaptive(instance, spec, budget, source, rng),
    }
}

/// Exploration where rewards come from `truth` but the algorithm plans and
/// scores with the standard deviations of `model` (same means and validation
/// are assumed). `spec.variance_knowledge` is ignored.
pub fn run_exploration_with_model(
    truth: &Instance,
    model: &Instance,
    spec: AlgorithmSpec,
    budget: u64,
    source: &dyn RewardSource,
    rng: &mut dyn RngCore,
) -> Result<ExplorationResult> {
    let num_treatments = truth.num_treatments();
    if model.num_treatments() != num_treatments || model.num_metrics() != truth.num_metrics() {
        return Err(Error::invalid("model and truth instances differ in shape"));
    }
    let m = truth.num_metrics();
    let stages = num_stages(num_treatments);
    let stage_budget = budget / stages as u64;
    let plugin = Plugin::new(model);

    let mut active: Vec<usize> = truth.treatments().collect();
    let mut trail = Vec::with_capacity(stages);
    let mut used = 0;
    for _ in 0..stages {
        let pulls = allocate(spec.sampling, model, &active, stage_budget)?;
        used += pulls.total();
        let mut control_means = vec![0.0; m];
        source.sample_means(truth, CONTROL, pulls.control_pulls, rng, &mut control_means);
        let treatment_means = active
            .iter()
            .map(|&a| {
                let mut mu = vec![0.0; m];
                source.sample_means(truth, a, pulls.pulls(a), rng, &mut mu);
                mu
            })
            .collect();
        let stats = plugin.stats(active, pulls, control_means, treatment_means);
        let keep = stats.active.len().div_ceil(2);
        active = match spec.elimination {
            Elimination::MinZ => minz_eliminate(&stats, keep),
            Elimination::Confidence => confidence_eliminate(&stats, keep),
            Elimination::Mean => mean_eliminate(&stats, keep),
        };
        trail.push(stats);
    }
    debug_assert_eq!(active.len(), 1);
    Ok(ExplorationResult { recommended: active[0], trail, total_pulls_used: used, warmup_pulls: 0 })
}
