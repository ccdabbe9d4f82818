//! Monte-Carlo experiments: many independent (exploration, validation)
//! trajectories per (algorithm, budget) cell, aggregated into rates with
//! Wilson intervals.
//!
//! Repetition `r` draws its exploration rewards from a ChaCha8 stream keyed by
//! `(master_seed, instance_index, r)` and its validation rewards from a
//! sibling stream. Algorithms and budgets share those streams, so cells are
//! paired, and results do not depend on thread count or scheduling.

use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::halving::{run_exploration, AlgorithmSpec};
use crate::instances::Preset;
use crate::model::{best_treatment, Instance};
use crate::normal;
use crate::rewards::RewardModel;
use crate::validate::run_validation;

/// Repetitions are indexed below this bound inside one stream family.
const REP_BITS: u32 = 40;
const VALIDATION_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    Fixed(Instance),
    Preset(Preset),
}

impl InstanceSource {
    pub fn build(&self) -> Result<Instance> {
        match self {
            InstanceSource::Fixed(inst) => Ok(inst.clone()),
            InstanceSource::Preset(p) => p.build(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            InstanceSource::Fixed(inst) => {
                format!("instance(A={}, M={})", inst.num_treatments(), inst.num_metrics())
            }
            InstanceSource::Preset(p) => p.to_string(),
        }
    }
}

impl From<Instance> for InstanceSource {
    fn from(inst: Instance) -> Self {
        InstanceSource::Fixed(inst)
    }
}

impl From<Preset> for InstanceSource {
    fn from(p: Preset) -> Self {
        InstanceSource::Preset(p)
    }
}

/// Which rates to estimate. Validation runs only when one of the last three
/// is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub exploration_accuracy: bool,
    pub validation_success: bool,
    pub type1_error: bool,
    pub joint_pass: bool,
}

impl MetricSet {
    pub const ALL: Self =
        MetricSet { exploration_accuracy: true, validation_success: true, type1_error: true, joint_pass: true };
    pub const EXPLORATION: Self =
        MetricSet { exploration_accuracy: true, validation_success: false, type1_error: false, joint_pass: false };

    fn needs_validation(&self) -> bool {
        self.validation_success || self.type1_error || self.joint_pass
    }
}

impl Default for MetricSet {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon over repetitions; `threads` caps the worker count. Without the
    /// `parallel` feature this runs sequentially.
    Parallel {
        threads: Option<usize>,
    },
}

impl Default for Execution {
    fn default() -> Self {
        Execution::Parallel { threads: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: InstanceSource,
    pub algorithms: Vec<AlgorithmSpec>,
    pub budgets: Vec<u64>,
    pub repetitions: u64,
    pub master_seed: u64,
    pub metrics: MetricSet,
    pub execution: Execution,
    pub rewards: RewardModel,
    /// Selects the stream family; distinct instances should use distinct
    /// indices so their draws are unrelated.
    pub instance_index: u64,
}

impl ExperimentConfig {
    pub fn new(
        source: impl Into<InstanceSource>,
        algorithms: Vec<AlgorithmSpec>,
        budgets: Vec<u64>,
        repetitions: u64,
        master_seed: u64,
    ) -> Self {
        ExperimentConfig {
            source: source.into(),
            algorithms,
            budgets,
            repetitions,
            master_seed,
            metrics: MetricSet::ALL,
            execution: Execution::default(),
            rewards: RewardModel::default(),
            instance_index: 0,
        }
    }

    fn check(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.repetitions >= 1 << REP_BITS {
            return Err(Error::invalid(format!("repetitions must be below 2^{REP_BITS}")));
        }
        if self.budgets.is_empty() {
            return Err(Error::invalid("no budgets given"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("no algorithms given"));
        }
        if self.instance_index >= 1 << (63 - REP_BITS) {
            return Err(Error::invalid("instance index too large"));
        }
        Ok(())
    }
}

/// A binomial proportion with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci: (f64, f64),
}

impl RateEstimate {
    pub fn new(successes: u64, trials: u64) -> Result<Self> {
        let ci = wilson_interval(successes, trials, 0.95)?;
        Ok(RateEstimate { successes, trials, rate: successes as f64 / trials as f64, ci })
    }

    /// Whether the two intervals are disjoint.
    pub fn separated_from(&self, other: &RateEstimate) -> bool {
        self.ci.1 < other.ci.0 || other.ci.1 < self.ci.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub algorithm: AlgorithmSpec,
    pub budget: u64,
    pub repetitions: u64,
    /// â = a*.
    pub exploration_accuracy: Option<RateEstimate>,
    /// â uniformly better than control and passing every metric.
    pub validation_success: Option<RateEstimate>,
    /// â not uniformly better than control, yet passing every metric.
    pub type1_error: Option<RateEstimate>,
    /// â passing every metric.
    pub joint_pass: Option<RateEstimate>,
    /// Wall time spent on the cell.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub instance: String,
    pub best: usize,
    /// Set by [`sweep`].
    pub sweep_value: Option<(SweepParam, f64)>,
    pub cells: Vec<CellReport>,
}

impl MonteCarloReport {
    pub fn cell(&self, algorithm: AlgorithmSpec, budget: u64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.algorithm == algorithm && c.budget == budget)
    }
}

/// Wilson score interval for `successes` out of `trials` at confidence
/// `level`.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::invalid("Wilson interval needs at least one trial"));
    }
    if successes > trials {
        return Err(Error::invalid(format!("{successes} successes out of {trials} trials")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = normal::quantile(0.5 + level / 2.0);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// The exploration stream of repetition `rep`.
pub fn repetition_rng(master_seed: u64, instance_index: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((instance_index << REP_BITS) | rep);
    rng
}

fn validation_rng(master_seed: u64, instance_index: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(VALIDATION_STREAM | (instance_index << REP_BITS) | rep);
    rng
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    correct: u64,
    passed: u64,
    succeeded: u64,
    type1: u64,
}

impl AddAssign for Tally {
    fn add_assign(&mut self, o: Self) {
        self.correct += o.correct;
        self.passed += o.passed;
        self.succeeded += o.succeeded;
        self.type1 += o.type1;
    }
}

struct Cell<'a> {
    instance: &'a Instance,
    best: usize,
    algorithm: AlgorithmSpec,
    budget: u64,
    config: &'a ExperimentConfig,
}

impl Cell<'_> {
    fn repetition(&self, rep: u64) -> Result<Tally> {
        let cfg = self.config;
        let mut rng = repetition_rng(cfg.master_seed, cfg.instance_index, rep);
        let res = run_exploration(self.instance, self.algorithm, self.budget, &cfg.rewards, &mut rng)?;
        let mut t = Tally { correct: (res.recommended == self.best) as u64, ..Tally::default() };
        if cfg.metrics.needs_validation() {
            let mut vrng = validation_rng(cfg.master_seed, cfg.instance_index, rep);
            let pass = run_validation(self.instance, res.recommended, &cfg.rewards, &mut vrng)?.pass_all();
            let better = self.instance.uniformly_better(res.recommended);
            t.passed = pass as u64;
            t.succeeded = (pass && better) as u64;
            t.type1 = (pass && !better) as u64;
        }
        Ok(t)
    }

    fn tally_sequential(&self) -> Result<Tally> {
        let mut total = Tally::default();
        for rep in 0..self.config.repetitions {
            total += self.repetition(rep)?;
        }
        Ok(total)
    }

    #[cfg(feature = "parallel")]
    fn tally_parallel(&self) -> Result<Tally> {
        use rayon::prelude::*;
        (0..self.config.repetitions).into_par_iter().map(|rep| self.repetition(rep)).try_reduce(
            Tally::default,
            |mut a, b| {
                a += b;
                Ok(a)
            },
        )
    }

    #[cfg(not(feature = "parallel"))]
    fn tally_parallel(&self) -> Result<Tally> {
        self.tally_sequential()
    }

    fn report(&self) -> Result<CellReport> {
        let start = Instant::now();
        let tally = match self.config.execution {
            Execution::Sequential => self.tally_sequential(),
            Execution::Parallel { .. } => self.tally_parallel(),
        }?;
        let n = self.config.repetitions;
        let m = &self.config.metrics;
        let rate = |wanted: bool, k: u64| if wanted { RateEstimate::new(k, n).map(Some) } else { Ok(None) };
        Ok(CellReport {
            algorithm: self.algorithm,
            budget: self.budget,
            repetitions: n,
            exploration_accuracy: rate(m.exploration_accuracy, tally.correct)?,
            validation_success: rate(m.validation_success, tally.succeeded)?,
            type1_error: rate(m.type1_error, tally.type1)?,
            joint_pass: rate(m.joint_pass, tally.passed)?,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs every (algorithm, budget) cell, algorithms outermost.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MonteCarloReport> {
    config.check()?;
    let instance = config.source.build()?;
    with_pool(config.execution, || run_cells(config, &instance))
}

fn run_cells(config: &ExperimentConfig, instance: &Instance) -> Result<MonteCarloReport> {
    let best = best_treatment(instance);
    let mut cells = Vec::with_capacity(config.algorithms.len() * config.budgets.len());
    for &algorithm in &config.algorithms {
        for &budget in &config.budgets {
            let cell = Cell { instance, best, algorithm, budget, config };
            cells.push(cell.report().map_err(|e| Error::Cell {
                algorithm: algorithm.name(),
                budget,
                source: Box::new(e),
            })?);
        }
    }
    Ok(MonteCarloReport { instance: config.source.label(), best, sweep_value: None, cells })
}

#[cfg(feature = "parallel")]
fn with_pool<T: Send>(execution: Execution, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match execution {
        Execution::Parallel { threads: Some(n) } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(f)
        }
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T: Send>(_execution: Execution, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    f()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    Budget,
    /// The exp2 heterogeneity level.
    HeterogeneityL,
    /// The validation horizon T_v.
    ValidationHorizon,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Budget => "budget",
            SweepParam::HeterogeneityL => "l",
            SweepParam::ValidationHorizon => "t_v",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "budget" | "t" => Ok(SweepParam::Budget),
            "l" | "heterogeneity_l" => Ok(SweepParam::HeterogeneityL),
            "t_v" | "tv" => Ok(SweepParam::ValidationHorizon),
            _ => Err(Error::invalid(format!("unknown sweep parameter `{s}` (expected budget, l or t_v)"))),
        }
    }
}

fn as_count(param: SweepParam, v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(Error::invalid(format!("{param} must be a non-negative integer, got {v}")))
    }
}

/// One report per value. Budget sweeps keep the instance and its streams;
/// l and T_v sweeps rebuild the instance and give value `k` the stream family
/// `instance_index + k`.
pub fn sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<MonteCarloReport>> {
    if values.is_empty() {
        return Err(Error::invalid("no sweep values given"));
    }
    let base = config.source.build()?;
    let mut jobs = Vec::with_capacity(values.len());
    for (k, &v) in values.iter().enumerate() {
        let mut cfg = config.clone();
        let mut label = None;
        match param {
            SweepParam::Budget => cfg.budgets = vec![as_count(param, v)?],
            SweepParam::HeterogeneityL => {
                let InstanceSource::Preset(p) = &config.source else {
                    return Err(Error::invalid("an l sweep needs the exp2 preset"));
                };
                cfg.source = InstanceSource::Preset(p.with_l(v)?);
                cfg.instance_index += k as u64;
            }
            SweepParam::ValidationHorizon => {
                let mut validation = base.validation().clone();
                validation.horizon = as_count(param, v)?;
                let inst = base.with_validation(validation)?;
                cfg.source = InstanceSource::Fixed(inst);
                cfg.instance_index += k as u64;
                label = Some(format!("{} with t_v={v}", config.source.label()));
            }
        }
        cfg.check()?;
        jobs.push((cfg, v, label));
    }
    with_pool(config.execution, || {
        jobs.iter()
            .map(|(cfg, v, label)| {
                let inst = cfg.source.build()?;
                let mut report = run_cells(cfg, &inst)?;
                if let Some(label) = label {
                    report.instance = label.clone();
                }
                report.sweep_value = Some((param, *v));
                Ok(report)
            })
            .collect()
    })
}
