//! Problem instances and the closed-form validation mathematics.
//!
//! Arm 0 is the control and arms `1..=A` are treatments. Every treatment is
//! scored by its z-value, the signal-to-noise ratio of its effect over control
//! shifted by a validation constant that encodes how strict the downstream A/B
//! test is. The treatment with the largest bottleneck (minimum over metrics)
//! z-value is the one most likely to pass validation on every metric.

use crate::error::{Error, Result};
use crate::normal;

pub const CONTROL: usize = 0;

/// The downstream A/B test applied to the recommended treatment.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationVariant {
    /// One-sided z-test per metric at level `delta[i]`.
    NonBayesian { delta: Vec<f64> },
    /// Normal prior N(0, tau[i]²) on the effect; pass when the posterior
    /// probability of a positive effect exceeds `q[i]`.
    Bayesian { q: Vec<f64>, tau: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub variant: ValidationVariant,
    /// Total validation pulls; each side gets `horizon / 2`.
    pub horizon: u64,
}

impl ValidationConfig {
    pub fn non_bayesian(delta: Vec<f64>, horizon: u64) -> Result<Self> {
        let cfg = ValidationConfig { variant: ValidationVariant::NonBayesian { delta }, horizon };
        cfg.check(None)?;
        Ok(cfg)
    }

    pub fn bayesian(q: Vec<f64>, tau: Vec<f64>, horizon: u64) -> Result<Self> {
        let cfg = ValidationConfig { variant: ValidationVariant::Bayesian { q, tau }, horizon };
        cfg.check(None)?;
        Ok(cfg)
    }

    pub fn num_metrics(&self) -> usize {
        match &self.variant {
            ValidationVariant::NonBayesian { delta } => delta.len(),
            ValidationVariant::Bayesian { q, .. } => q.len(),
        }
    }

    /// Pulls per side.
    pub fn half_horizon(&self) -> u64 {
        self.horizon / 2
    }

    pub(crate) fn check(&self, metrics: Option<usize>) -> Result<()> {
        let bad = |path: &str, reason: &str| Error::InvalidInstance {
            path: format!("validation.{path}"),
            reason: reason.to_string(),
        };
        if self.horizon == 0 || !self.horizon.is_multiple_of(2) {
            return Err(bad("horizon", "must be a positive even integer"));
        }
        let in_unit = |v: &[f64], name: &str| -> Result<()> {
            for (i, &x) in v.iter().enumerate() {
                if !(x > 0.0 && x < 1.0) {
                    return Err(bad(&format!("{name}[{i}]"), "must lie strictly inside (0, 1)"));
                }
            }
            Ok(())
        };
        match &self.variant {
            ValidationVariant::NonBayesian { delta } => in_unit(delta, "delta")?,
            ValidationVariant::Bayesian { q, tau } => {
                in_unit(q, "q")?;
                if tau.len() != q.len() {
                    return Err(bad("tau", "must have one entry per metric"));
                }
                for (i, &t) in tau.iter().enumerate() {
                    if !(t > 0.0 && t.is_finite()) {
                        return Err(bad(&format!("tau[{i}]"), "must be positive and finite"));
                    }
                }
            }
        }
        let m = self.num_metrics();
        if m == 0 {
            return Err(bad("variant", "needs at least one metric"));
        }
        if let Some(expected) = metrics {
            if m != expected {
                return Err(bad("variant", &format!("has {m} metrics, instance has {expected}")));
            }
        }
        Ok(())
    }
}

/// A complete multi-metric bandit problem with its validation test.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    num_treatments: usize,
    num_metrics: usize,
    // Row-major (A+1)×M.
    means: Vec<f64>,
    stddevs: Vec<f64>,
    validation: ValidationConfig,
}

impl Instance {
    /// `means[a][i]` and `stddevs[a][i]` for arm `a` (row 0 is control).
    pub fn new(means: Vec<Vec<f64>>, stddevs: Vec<Vec<f64>>, validation: ValidationConfig) -> Result<Self> {
        let bad = |path: String, reason: &str| Error::InvalidInstance { path, reason: reason.into() };
        if means.len() < 2 {
            return Err(bad("means".into(), "needs a control row and at least one treatment"));
        }
        if stddevs.len() != means.len() {
            return Err(bad("stddevs".into(), "must have the same number of rows as means"));
        }
        let num_metrics = means[0].len();
        if num_metrics == 0 {
            return Err(bad("means[0]".into(), "needs at least one metric"));
        }
        for (a, (mu, sd)) in means.iter().zip(&stddevs).enumerate() {
            if mu.len() != num_metrics {
                return Err(bad(format!("means[{a}]"), "row length differs from num_metrics"));
            }
            if sd.len() != num_metrics {
                return Err(bad(format!("stddevs[{a}]"), "row length differs from num_metrics"));
            }
            for i in 0..num_metrics {
                if !mu[i].is_finite() {
                    return Err(bad(format!("means[{a}][{i}]"), "must be finite"));
                }
                if !(sd[i] > 0.0 && sd[i].is_finite()) {
                    return Err(bad(format!("stddevs[{a}][{i}]"), "must be positive and finite"));
                }
            }
        }
        validation.check(Some(num_metrics))?;
        Ok(Instance {
            num_treatments: means.len() - 1,
            num_metrics,
            means: means.into_iter().flatten().collect(),
            stddevs: stddevs.into_iter().flatten().collect(),
            validation,
        })
    }

    pub fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    pub fn num_metrics(&self) -> usize {
        self.num_metrics
    }

    pub fn num_arms(&self) -> usize {
        self.num_treatments + 1
    }

    pub fn validation(&self) -> &ValidationConfig {
        &self.validation
    }

    pub fn mean(&self, arm: usize, metric: usize) -> f64 {
        self.means[arm * self.num_metrics + metric]
    }

    pub fn stddev(&self, arm: usize, metric: usize) -> f64 {
        self.stddevs[arm * self.num_metrics + metric]
    }

    pub fn means_of(&self, arm: usize) -> &[f64] {
        &self.means[arm * self.num_metrics..(arm + 1) * self.num_metrics]
    }

    pub fn stddevs_of(&self, arm: usize) -> &[f64] {
        &self.stddevs[arm * self.num_metrics..(arm + 1) * self.num_metrics]
    }

    pub fn mean_rows(&self) -> Vec<Vec<f64>> {
        self.means.chunks(self.num_metrics).map(<[f64]>::to_vec).collect()
    }

    pub fn stddev_rows(&self) -> Vec<Vec<f64>> {
        self.stddevs.chunks(self.num_metrics).map(<[f64]>::to_vec).collect()
    }

    pub fn treatments(&self) -> impl Iterator<Item = usize> {
        1..=self.num_treatments
    }

    /// Same problem with different standard deviations, e.g. plug-in estimates.
    pub fn with_stddevs(&self, stddevs: Vec<Vec<f64>>) -> Result<Self> {
        Instance::new(self.mean_rows(), stddevs, self.validation.clone())
    }

    pub fn with_validation(&self, validation: ValidationConfig) -> Result<Self> {
        Instance::new(self.mean_rows(), self.stddev_rows(), validation)
    }

    /// Signal-to-noise ratio of treatment `a` over control on `metric`.
    pub fn snr(&self, a: usize, metric: usize) -> f64 {
        let s0 = self.stddev(CONTROL, metric);
        let sa = self.stddev(a, metric);
        (self.mean(a, metric) - self.mean(CONTROL, metric)) / (sa * sa + s0 * s0).sqrt()
    }

    /// (ρ², λ²) of treatment `a` on `metric`.
    pub fn relative_variance(&self, a: usize, metric: usize) -> (f64, f64) {
        relative_variance_unchecked(self.stddev(a, metric), self.stddev(CONTROL, metric))
    }

    /// True when the treatment's mean beats control on every metric.
    pub fn uniformly_better(&self, a: usize) -> bool {
        (0..self.num_metrics).all(|i| self.mean(a, i) > self.mean(CONTROL, i))
    }

    pub(crate) fn check_treatment(&self, a: usize) -> Result<()> {
        if a == CONTROL || a > self.num_treatments {
            return Err(Error::invalid(format!("treatment index {a} outside 1..={}", self.num_treatments)));
        }
        Ok(())
    }
}

fn relative_variance_unchecked(sigma_a: f64, sigma_0: f64) -> (f64, f64) {
    let va = sigma_a * sigma_a;
    let v0 = sigma_0 * sigma_0;
    let total = va + v0;
    (va / total, v0 / total)
}

/// Share of z-estimator noise from the treatment (ρ²) and from control (λ²).
pub fn relative_variance(sigma_a: f64, sigma_0: f64) -> Result<(f64, f64)> {
    if !sigma_a.is_finite() || !sigma_0.is_finite() {
        return Err(Error::invalid("standard deviations must be finite"));
    }
    if sigma_0.is_nan() || sigma_0 <= 0.0 || sigma_a < 0.0 {
        return Err(Error::invalid("need sigma_0 > 0 and sigma_a >= 0"));
    }
    Ok(relative_variance_unchecked(sigma_a, sigma_0))
}

/// Validation constant ξ for a treatment with stddev `sigma_a` on `metric`.
///
/// Non-Bayesian: Φ⁻¹(δ)/√(T_v/2). Bayesian: Φ⁻¹(1−q)/√(T_v/2) inflated by
/// √(1 + 2(σ_a²+σ_0²)/(τ²T_v)).
pub fn validation_constant(config: &ValidationConfig, sigma_a: f64, sigma_0: f64, metric: usize) -> Result<f64> {
    if metric >= config.num_metrics() {
        return Err(Error::invalid(format!("metric {metric} out of range")));
    }
    let half = config.horizon as f64 / 2.0;
    Ok(match &config.variant {
        ValidationVariant::NonBayesian { delta } => normal::quantile(delta[metric]) / half.sqrt(),
        ValidationVariant::Bayesian { q, tau } => {
            let s = sigma_a * sigma_a + sigma_0 * sigma_0;
            let inflation = (1.0 + 2.0 * s / (tau[metric] * tau[metric] * config.horizon as f64)).sqrt();
            normal::quantile(1.0 - q[metric]) / half.sqrt() * inflation
        }
    })
}

/// Per-treatment z-values, validation constants and bottleneck metrics.
///
/// Rows are indexed by treatment minus one; use the accessors to index by
/// treatment number.
#[derive(Debug, Clone, PartialEq)]
pub struct ZProfile {
    pub z: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub bottleneck: Vec<usize>,
}

impl ZProfile {
    pub fn z(&self, a: usize, metric: usize) -> f64 {
        self.z[a - 1][metric]
    }

    pub fn xi(&self, a: usize, metric: usize) -> f64 {
        self.xi[a - 1][metric]
    }

    /// min over metrics of z for treatment `a`.
    pub fn bottleneck_z(&self, a: usize) -> f64 {
        self.z[a - 1][self.bottleneck[a - 1]]
    }

    /// Treatment maximizing the bottleneck z-value; lowest index on ties.
    pub fn best(&self) -> usize {
        argmax_lowest(self.z.iter().map(|row| min_of(row))) + 1
    }
}

pub(crate) fn min_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Index of the first maximal element.
pub(crate) fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_val || k == 0 {
            best = k;
            best_val = v;
        }
    }
    best
}

/// Index of the first minimal element.
pub(crate) fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}

pub fn z_profile(instance: &Instance) -> ZProfile {
    let m = instance.num_metrics();
    let cfg = instance.validation();
    let mut z = Vec::with_capacity(instance.num_treatments());
    let mut xi = Vec::with_capacity(instance.num_treatments());
    for a in instance.treatments() {
        let xi_row: Vec<f64> = (0..m)
            .map(|i| {
                validation_constant(cfg, instance.stddev(a, i), instance.stddev(CONTROL, i), i)
                    .expect("metric index in range")
            })
            .collect();
        z.push((0..m).map(|i| instance.snr(a, i) + xi_row[i]).collect::<Vec<_>>());
        xi.push(xi_row);
    }
    let bottleneck = z.iter().map(|row: &Vec<f64>| argmin_lowest(row)).collect();
    ZProfile { z, xi, bottleneck }
}

pub fn best_treatment(instance: &Instance) -> usize {
    z_profile(instance).best()
}

/// Exact probability that treatment `a` passes validation on `metric`
/// (Gaussian rewards).
pub fn pass_probability(instance: &Instance, a: usize, metric: usize) -> Result<f64> {
    instance.check_treatment(a)?;
    if metric >= instance.num_metrics() {
        return Err(Error::invalid(format!("metric {metric} out of range")));
    }
    let cfg = instance.validation();
    let tv = cfg.horizon as f64;
    let shift = instance.snr(a, metric) * (tv / 2.0).sqrt();
    let threshold = match &cfg.variant {
        ValidationVariant::NonBayesian { delta } => normal::quantile(1.0 - delta[metric]),
        ValidationVariant::Bayesian { q, tau } => {
            let s = instance.stddev(a, metric).powi(2) + instance.stddev(CONTROL, metric).powi(2);
            normal::quantile(q[metric]) * (1.0 + 2.0 * s / (tau[metric].powi(2) * tv)).sqrt()
        }
    };
    Ok(normal::sf(threshold - shift))
}

/// Probability of passing on every metric (metrics are independent).
pub fn joint_pass_probability(instance: &Instance, a: usize) -> Result<f64> {
    (0..instance.num_metrics()).try_fold(1.0, |acc, i| Ok(acc * pass_probability(instance, a, i)?))
}
