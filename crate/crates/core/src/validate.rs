//! The downstream A/B test: the recommended treatment and control are each
//! pulled T_v/2 times and tested metric by metric.

use rand::RngCore;

use crate::error::Result;
use crate::model::{Instance, ValidationVariant, CONTROL};
use crate::normal;
use crate::rewards::RewardSource;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub per_metric_pass: Vec<bool>,
    /// μ̂(â, i) − μ̂(0, i).
    pub ate_estimates: Vec<f64>,
    /// Bayesian runs only.
    pub posterior: Option<Vec<Posterior>>,
    /// Posterior probability of a positive effect, Bayesian runs only.
    pub p: Option<Vec<f64>>,
}

impl ValidationOutcome {
    pub fn pass_all(&self) -> bool {
        self.per_metric_pass.iter().all(|&p| p)
    }
}

/// Normal-normal posterior of the effect under a N(0, τ²) prior, given the
/// observed difference of two T_v/2-pull sample means.
pub fn posterior(sample_mean_diff: f64, sigma_a: f64, sigma_0: f64, tau: f64, t_v: u64) -> Posterior {
    let precision = t_v as f64 / (2.0 * (sigma_a * sigma_a + sigma_0 * sigma_0));
    let variance = (precision + (tau * tau).recip()).recip();
    Posterior { mean: precision * variance * sample_mean_diff, variance }
}

/// Applies the test to already observed effect estimates.
pub fn decide(instance: &Instance, treatment: usize, ate_estimates: Vec<f64>) -> Result<ValidationOutcome> {
    instance.check_treatment(treatment)?;
    let cfg = instance.validation();
    let tv = cfg.horizon as f64;
    let noise_sq = |i: usize| instance.stddev(treatment, i).powi(2) + instance.stddev(CONTROL, i).powi(2);
    Ok(match &cfg.variant {
        ValidationVariant::NonBayesian { delta } => {
            let per_metric_pass = ate_estimates
                .iter()
                .enumerate()
                .map(|(i, &d)| d >= normal::quantile(1.0 - delta[i]) * (2.0 * noise_sq(i) / tv).sqrt())
                .collect();
            ValidationOutcome { per_metric_pass, ate_estimates, posterior: None, p: None }
        }
        ValidationVariant::Bayesian { q, tau } => {
            let post: Vec<Posterior> = ate_estimates
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    posterior(d, instance.stddev(treatment, i), instance.stddev(CONTROL, i), tau[i], cfg.horizon)
                })
                .collect();
            let ratio = |p: &Posterior| p.mean / p.variance.sqrt();
            let per_metric_pass = post.iter().enumerate().map(|(i, p)| ratio(p) >= normal::quantile(q[i])).collect();
            let p = post.iter().map(|p| normal::cdf(ratio(p))).collect();
            ValidationOutcome { per_metric_pass, ate_estimates, posterior: Some(post), p: Some(p) }
        }
    })
}

/// Simulates one validation of `treatment` against control.
pub fn run_validation(
    instance: &Instance,
    treatment: usize,
    source: &dyn RewardSource,
    rng: &mut dyn RngCore,
) -> Result<ValidationOutcome> {
    instance.check_treatment(treatment)?;
    let m = instance.num_metrics();
    let n = instance.validation().half_horizon();
    let (mut mu_a, mut mu_0) = (vec![0.0; m], vec![0.0; m]);
    source.sample_means(instance, treatment, n, rng, &mut mu_a);
    source.sample_means(instance, CONTROL, n, rng, &mut mu_0);
    decide(instance, treatment, mu_a.iter().zip(&mu_0).map(|(a, b)| a - b).collect())
}
