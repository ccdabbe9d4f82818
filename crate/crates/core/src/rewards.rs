//! Reward generation.
//!
//! The engines only ever consume per-arm sample means (and, for the
//! unknown-variance warmup, sample variances), so the default source draws
//! those sufficient statistics directly instead of summing individual pulls.

use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::model::Instance;

pub trait RewardSource: Sync {
    /// Writes the per-metric sample means of `n ≥ 1` pulls of `arm` into `out`.
    fn sample_means(&self, instance: &Instance, arm: usize, n: u64, rng: &mut dyn RngCore, out: &mut [f64]);

    /// Sample means and unbiased sample variances of `n ≥ 2` pulls of `arm`.
    fn sample_moments(
        &self,
        instance: &Instance,
        arm: usize,
        n: u64,
        rng: &mut dyn RngCore,
        means: &mut [f64],
        variances: &mut [f64],
    );
}

/// Gaussian rewards via sufficient statistics: mean ~ N(μ, σ²/n) and
/// variance ~ σ²·χ²_{n−1}/(n−1), independent.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianRewards;

impl RewardSource for GaussianRewards {
    fn sample_means(&self, instance: &Instance, arm: usize, n: u64, rng: &mut dyn RngCore, out: &mut [f64]) {
        let scale = (n as f64).sqrt().recip();
        for (i, slot) in out.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *slot = instance.mean(arm, i) + instance.stddev(arm, i) * scale * z;
        }
    }

    fn sample_moments(
        &self,
        instance: &Instance,
        arm: usize,
        n: u64,
        rng: &mut dyn RngCore,
        means: &mut [f64],
        variances: &mut [f64],
    ) {
        assert!(n >= 2, "sample variance needs at least two pulls");
        let dof = (n - 1) as f64;
        let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
        self.sample_means(instance, arm, n, rng, means);
        for (i, slot) in variances.iter_mut().enumerate() {
            let s = instance.stddev(arm, i);
            *slot = s * s * chi.sample(rng) / dof;
        }
    }
}

/// Gaussian rewards drawn one pull at a time. Slower; kept as a reference for
/// the sufficient-statistic source.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerPullGaussian;

impl RewardSource for PerPullGaussian {
    fn sample_means(&self, instance: &Instance, arm: usize, n: u64, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (i, slot) in out.iter_mut().enumerate() {
            let (mu, sd) = (instance.mean(arm, i), instance.stddev(arm, i));
            let mut sum = 0.0;
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                sum += mu + sd * z;
            }
            *slot = sum / n as f64;
        }
    }

    fn sample_moments(
        &self,
        instance: &Instance,
        arm: usize,
        n: u64,
        rng: &mut dyn RngCore,
        means: &mut [f64],
        variances: &mut [f64],
    ) {
        assert!(n >= 2, "sample variance needs at least two pulls");
        for i in 0..means.len() {
            let (mu, sd) = (instance.mean(arm, i), instance.stddev(arm, i));
            // Welford.
            let (mut mean, mut m2) = (0.0, 0.0);
            for k in 1..=n {
                let z: f64 = rng.sample(StandardNormal);
                let x = mu + sd * z;
                let d = x - mean;
                mean += d / k as f64;
                m2 += d * (x - mean);
            }
            means[i] = mean;
            variances[i] = m2 / (n - 1) as f64;
        }
    }
}

/// Every pull returns the true mean exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct Noiseless;

impl RewardSource for Noiseless {
    fn sample_means(&self, instance: &Instance, arm: usize, _n: u64, _rng: &mut dyn RngCore, out: &mut [f64]) {
        out.copy_from_slice(instance.means_of(arm));
    }

    fn sample_moments(
        &self,
        instance: &Instance,
        arm: usize,
        _n: u64,
        _rng: &mut dyn RngCore,
        means: &mut [f64],
        variances: &mut [f64],
    ) {
        means.copy_from_slice(instance.means_of(arm));
        variances.fill(0.0);
    }
}

/// Runtime choice of reward source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardModel {
    #[default]
    Gaussian,
    PerPull,
    Noiseless,
}

impl RewardSource for RewardModel {
    fn sample_means(&self, instance: &Instance, arm: usize, n: u64, rng: &mut dyn RngCore, out: &mut [f64]) {
        match self {
            RewardModel::Gaussian => GaussianRewards.sample_means(instance, arm, n, rng, out),
            RewardModel::PerPull => PerPullGaussian.sample_means(instance, arm, n, rng, out),
            RewardModel::Noiseless => Noiseless.sample_means(instance, arm, n, rng, out),
        }
    }

    fn sample_moments(
        &self,
        instance: &Instance,
        arm: usize,
        n: u64,
        rng: &mut dyn RngCore,
        means: &mut [f64],
        variances: &mut [f64],
    ) {
        match self {
            RewardModel::Gaussian => GaussianRewards.sample_moments(instance, arm, n, rng, means, variances),
            RewardModel::PerPull => PerPullGaussian.sample_moments(instance, arm, n, rng, means, variances),
            RewardModel::Noiseless => Noiseless.sample_moments(instance, arm, n, rng, means, variances),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ValidationConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst() -> Instance {
        Instance::new(
            vec![vec![0.0, 1.0], vec![2.0, -3.0]],
            vec![vec![1.0, 0.5], vec![3.0, 2.0]],
            ValidationConfig::non_bayesian(vec![0.05, 0.05], 10).unwrap(),
        )
        .unwrap()
    }

    fn moments(source: &dyn RewardSource, n: u64, draws: usize) -> [(f64, f64); 2] {
        let inst = inst();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        let mut acc = [(0.0, 0.0); 2];
        for _ in 0..draws {
            source.sample_moments(&inst, 1, n, &mut rng, &mut m, &mut v);
            for i in 0..2 {
                acc[i].0 += m[i];
                acc[i].1 += m[i] * m[i];
            }
        }
        let d = draws as f64;
        [0, 1].map(|i| {
            let mean = acc[i].0 / d;
            // (mean of means, n × variance of means) both estimate μ, σ².
            let var_of_mean = acc[i].1 / d - mean * mean;
            (mean, var_of_mean * n as f64)
        })
    }

    #[test]
    fn both_gaussian_sources_agree_with_the_model() {
        for source in [&GaussianRewards as &dyn RewardSource, &PerPullGaussian] {
            let [(m0, v0), (m1, v1)] = moments(source, 8, 20_000);
            assert!((m0 - 2.0).abs() < 0.04, "{m0}");
            assert!((m1 + 3.0).abs() < 0.03, "{m1}");
            assert!((v0 / 9.0 - 1.0).abs() < 0.05, "{v0}");
            assert!((v1 / 4.0 - 1.0).abs() < 0.05, "{v1}");
        }
    }

    #[test]
    fn sample_variances_are_unbiased() {
        let inst = inst();
        for source in [&GaussianRewards as &dyn RewardSource, &PerPullGaussian] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
            let mut sum = [0.0; 2];
            let draws = 20_000;
            for _ in 0..draws {
                source.sample_moments(&inst, 1, 4, &mut rng, &mut m, &mut v);
                sum[0] += v[0];
                sum[1] += v[1];
            }
            assert!((sum[0] / draws as f64 / 9.0 - 1.0).abs() < 0.03);
            assert!((sum[1] / draws as f64 / 4.0 - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn noiseless_returns_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = [0.0; 2];
        Noiseless.sample_means(&inst(), 1, 3, &mut rng, &mut out);
        assert_eq!(out, [2.0, -3.0]);
        let mut var = [1.0; 2];
        RewardModel::Noiseless.sample_moments(&inst(), 0, 3, &mut rng, &mut out, &mut var);
        assert_eq!((out, var), ([0.0, 1.0], [0.0, 0.0]));
    }
}
