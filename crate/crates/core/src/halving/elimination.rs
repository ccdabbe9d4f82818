//! Elimination rules applied at the end of each stage.

use super::StageStats;
use crate::error::{Error, Result};

/// Arms of the `keep` largest scores, ties to the lower index, returned in
/// increasing order.
fn keep_top(active: &[usize], scores: &[f64], keep: usize) -> Vec<usize> {
    assert!(keep <= active.len(), "cannot keep {keep} of {} arms", active.len());
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    let mut kept: Vec<usize> = order[..keep].iter().map(|&k| active[k]).collect();
    kept.sort_unstable();
    kept
}

/// Keeps the `keep` treatments with the largest min_i ẑ.
pub fn minz_eliminate(stats: &StageStats, keep: usize) -> Vec<usize> {
    let scores: Vec<f64> = (0..stats.active.len()).map(|k| stats.min_z(k)).collect();
    keep_top(&stats.active, &scores, keep)
}

/// Keeps the `keep` treatments with the largest min_i μ̂.
pub fn mean_eliminate(stats: &StageStats, keep: usize) -> Vec<usize> {
    let scores: Vec<f64> = stats.treatment_means.iter().map(|row| crate::model::min_of(row)).collect();
    keep_top(&stats.active, &scores, keep)
}

/// b = 2·√((ρ²/n_a + λ²/n_0)·log(|A_s|M/δ)).
pub fn confidence_bonus(
    delta: f64,
    rho_sq: f64,
    lambda_sq: f64,
    n_a: u64,
    n_0: u64,
    active_count: usize,
    num_metrics: usize,
) -> Result<f64> {
    let k = (active_count * num_metrics) as f64;
    if !(delta > 0.0 && delta <= k) {
        return Err(Error::invalid(format!("delta {delta} outside (0, {k}]")));
    }
    if n_a == 0 || n_0 == 0 {
        return Err(Error::invalid("pull counts must be positive"));
    }
    let v = rho_sq / n_a as f64 + lambda_sq / n_0 as f64;
    Ok(2.0 * (v * (k / delta).ln()).sqrt())
}

/// With c = √log(|A_s|M/δ), every bonus is 2√v·c, so the UCB/LCB comparison is
/// a monotone function of c alone.
struct Bounds<'a> {
    z: &'a [Vec<f64>],
    width: Vec<Vec<f64>>,
}

impl<'a> Bounds<'a> {
    fn new(stats: &'a StageStats) -> Self {
        let width = stats.variance_terms.iter().map(|row| row.iter().map(|v| 2.0 * v.sqrt()).collect()).collect();
        Bounds { z: &stats.empirical_z, width }
    }

    fn bound(&self, k: usize, c: f64) -> f64 {
        self.z[k].iter().zip(&self.width[k]).map(|(z, w)| z + w * c).fold(f64::INFINITY, f64::min)
    }

    /// UCB_k(c) − max_j LCB_j(c); nondecreasing in c.
    fn gap(&self, k: usize, c: f64) -> f64 {
        let max_lcb = (0..self.z.len()).map(|j| self.bound(j, -c)).fold(f64::NEG_INFINITY, f64::max);
        self.bound(k, c) - max_lcb
    }

    /// Smallest c ≥ 0 with gap(k, c) ≥ 0.
    fn crossing(&self, k: usize) -> f64 {
        if self.gap(k, 0.0) >= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.gap(k, hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e150 {
                return f64::INFINITY;
            }
        }
        while hi - lo > 1e-10 * hi {
            let mid = 0.5 * (lo + hi);
            if self.gap(k, mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn level_from_crossing(stats: &StageStats, c: f64) -> f64 {
    let k = (stats.active.len() * stats.num_metrics()) as f64;
    k * (-c * c).exp()
}

/// δ_s(a): the confidence level at which `a`'s upper bound meets the largest
/// lower bound among active treatments. The empirical leader gets the cap
/// |A_s|·M.
pub fn confidence_level(stats: &StageStats, treatment: usize) -> Result<f64> {
    let k = stats.row(treatment).ok_or_else(|| Error::invalid(format!("treatment {treatment} is not active")))?;
    Ok(level_from_crossing(stats, Bounds::new(stats).crossing(k)))
}

/// Keeps the `keep` treatments with the largest δ_s(a).
pub fn confidence_eliminate(stats: &StageStats, keep: usize) -> Vec<usize> {
    // Rank on the crossing point itself: δ = K·exp(−c²) underflows to 0 for
    // several arms at once when c is large, which would turn the ranking into
    // an index tie-break.
    let bounds = Bounds::new(stats);
    let scores: Vec<f64> = (0..stats.active.len()).map(|k| -bounds.crossing(k)).collect();
    keep_top(&stats.active, &scores, keep)
}
