//! Instance difficulty: relative-variance heterogeneity κ, effective gaps, the
//! H₃ family of complexity measures and the resulting error bounds.
//!
//! H₃ is a minimum over every subset of treatments containing the best one,
//! so it is computed by exhaustive enumeration (2^(A−1) subsets) and capped at
//! a configurable A. [`h3_prime`] is the closed-form fallback.

use crate::alloc::check_active;
use crate::error::{Error, Result};
use crate::halving::num_stages;
use crate::model::{min_of, z_profile, Instance};

pub const DEFAULT_MAX_ENUMERATION: usize = 20;
// Masks are u64 and the enumeration is over A − 1 bits.
const HARD_MAX_ENUMERATION: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub best: usize,
    pub h3: f64,
    pub h3_prime: f64,
    pub h3_tilde: Option<f64>,
    /// Smallest gap between the best treatment's bottleneck z-value and any
    /// other treatment's.
    pub delta_min: f64,
    /// Subset attaining H₃ (empty when A = 1).
    pub argmin_subset: Vec<usize>,
    /// (ρ_S + λ_S)·√(⌈log₂A⌉/T) for the attaining subset, when T is known.
    pub gamma_s: Option<f64>,
}

/// Which theorem's exponent constant to use in [`error_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    /// min-z elimination: exp(−T/(2·H₃·log₂A)).
    Theorem1,
    /// Confidence elimination with the constant its proof arrives at:
    /// exp(−T/(8·H̃₃·log₂A)).
    Theorem2,
    /// Confidence elimination with the constant as stated: exp(−T/(2·H̃₃·log₂A)).
    Theorem2Stated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    pub value: f64,
    /// The bound is ≥ 1 and says nothing.
    pub vacuous: bool,
}

/// Per-treatment quantities shared by every subset.
struct Prepared {
    best: usize,
    m: usize,
    z: Vec<Vec<f64>>,
    rho_sq: Vec<Vec<f64>>,
    lambda_sq: Vec<Vec<f64>>,
    max_rho_sq: Vec<f64>,
    max_lambda_sq: Vec<f64>,
    delta_min: f64,
}

impl Prepared {
    /// Rows indexed by treatment number; row 0 is unused padding.
    fn new(instance: &Instance) -> Self {
        let zp = z_profile(instance);
        let m = instance.num_metrics();
        let best = zp.best();
        let arms = instance.num_arms();
        let mut z = vec![vec![0.0; m]; arms];
        let (mut rho_sq, mut lambda_sq) = (vec![vec![0.0; m]; arms], vec![vec![0.0; m]; arms]);
        for a in instance.treatments() {
            z[a] = zp.z[a - 1].clone();
            for i in 0..m {
                (rho_sq[a][i], lambda_sq[a][i]) = instance.relative_variance(a, i);
            }
        }
        let row_max = |row: &Vec<f64>| row.iter().copied().fold(0.0, f64::max);
        let max_rho_sq = rho_sq.iter().map(row_max).collect();
        let max_lambda_sq = lambda_sq.iter().map(row_max).collect();
        let best_min = min_of(&z[best]);
        let delta_min = instance
            .treatments()
            .filter(|&a| a != best)
            .map(|a| best_min - min_of(&z[a]))
            .fold(f64::INFINITY, f64::min);
        Prepared { best, m, z, rho_sq, lambda_sq, max_rho_sq, max_lambda_sq, delta_min }
    }

    /// (ρ_S, λ_S) for a subset.
    fn scales(&self, subset: impl Iterator<Item = usize>) -> (f64, f64) {
        let (mut r, mut l) = (0.0, 0.0f64);
        for a in subset {
            r += self.max_rho_sq[a];
            l = l.max(self.max_lambda_sq[a]);
        }
        (r.sqrt(), l.sqrt())
    }

    fn kappa(&self, scales: (f64, f64), a: usize, i: usize) -> f64 {
        let (rs, ls) = scales;
        (self.rho_sq[a][i] / self.max_rho_sq[a] * rs + self.lambda_sq[a][i] / (ls * ls) * ls) / (rs + ls)
    }

    /// D² (or D̃² when `tilde` carries the correction Δ²_min − 8A·L²/T).
    fn gap_sq(&self, scales: (f64, f64), a: usize, tilde: Option<f64>) -> f64 {
        let b = self.best;
        let mut outer = f64::INFINITY;
        for i in 0..self.m {
            let kb = self.kappa(scales, b, i);
            let mut inner = f64::NEG_INFINITY;
            for j in 0..self.m {
                let ka = self.kappa(scales, a, j);
                let g = (self.z[b][i] - self.z[a][j]).max(0.0);
                let mut v = g * g / ((ka + kb) * (ka + kb));
                if let Some(corr) = tilde {
                    if ka > kb {
                        v = v.min(g * g / ((ka - kb) * (ka - kb)) + corr);
                    }
                }
                inner = inner.max(v);
            }
            outer = outer.min(inner);
        }
        outer.max(0.0)
    }

    /// min over S'_c of gap² / (ρ_S+λ_S)² for one subset, or None when S'_c
    /// is empty. `members` excludes the best treatment.
    fn subset_value(&self, members: &[usize], tilde: Option<f64>, buf: &mut Vec<f64>) -> Option<f64> {
        if members.is_empty() {
            return None;
        }
        let scales = self.scales(members.iter().copied().chain([self.best]));
        buf.clear();
        buf.extend(members.iter().map(|&a| self.gap_sq(scales, a, tilde)));
        let size = members.len() + 1;
        let drop = if size >= 4 { size / 4 } else { 0 };
        // The (drop+1)-th smallest gap is the minimum over what remains.
        let (_, kth, _) = buf.select_nth_unstable_by(drop, f64::total_cmp);
        let total = scales.0 + scales.1;
        Some(*kth / (total * total))
    }

    fn suboptimal(&self) -> Vec<usize> {
        (1..self.z.len()).filter(|&a| a != self.best).collect()
    }
}

fn members_of(subs: &[usize], mask: u64, out: &mut Vec<usize>) {
    out.clear();
    out.extend(subs.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &a)| a));
}

/// Minimum subset value and the lowest mask attaining it.
fn enumerate(p: &Prepared, tilde: Option<f64>) -> Option<(f64, u64)> {
    let subs = p.suboptimal();
    let count = 1u64 << subs.len();
    let eval = |bufs: &mut (Vec<usize>, Vec<f64>), mask: u64| {
        members_of(&subs, mask, &mut bufs.0);
        p.subset_value(&bufs.0, tilde, &mut bufs.1).map(|v| (v, mask))
    };
    let better = |x: Option<(f64, u64)>, y: Option<(f64, u64)>| match (x, y) {
        (Some(a), Some(b)) => Some(if b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).is_lt() { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (1..count).into_par_iter().map_init(|| (Vec::new(), Vec::new()), eval).reduce(|| None, better)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut bufs = (Vec::new(), Vec::new());
        (1..count).map(|mask| eval(&mut bufs, mask)).fold(None, better)
    }
}

fn check_cap(instance: &Instance, max_enumeration: usize) -> Result<()> {
    let max = max_enumeration.min(HARD_MAX_ENUMERATION);
    if instance.num_treatments() > max {
        return Err(Error::TooLarge { num_treatments: instance.num_treatments(), max });
    }
    Ok(())
}

fn tilde_correction(p: &Prepared, num_treatments: usize, budget: u64) -> f64 {
    let l = num_stages(num_treatments) as f64;
    let d = if p.delta_min.is_finite() { p.delta_min } else { 0.0 };
    if budget == 0 {
        return f64::NEG_INFINITY;
    }
    d * d - 8.0 * num_treatments as f64 * l * l / budget as f64
}

/// κ_{S,a,i}.
pub fn kappa(instance: &Instance, subset: &[usize], a: usize, metric: usize) -> Result<f64> {
    check_active(instance, subset)?;
    if !subset.contains(&a) {
        return Err(Error::invalid(format!("treatment {a} is not in the subset")));
    }
    if metric >= instance.num_metrics() {
        return Err(Error::invalid(format!("metric {metric} out of range")));
    }
    let p = Prepared::new(instance);
    Ok(p.kappa(p.scales(subset.iter().copied()), a, metric))
}

/// D_{S,a}: the κ-normalized z separation between `a` and the best treatment.
pub fn effective_gap(instance: &Instance, subset: &[usize], a: usize) -> Result<f64> {
    check_active(instance, subset)?;
    let p = Prepared::new(instance);
    if a == p.best {
        return Err(Error::invalid("the effective gap of the best treatment is undefined"));
    }
    if !subset.contains(&a) || !subset.contains(&p.best) {
        return Err(Error::invalid("subset must contain both the treatment and the best treatment"));
    }
    Ok(p.gap_sq(p.scales(subset.iter().copied()), a, None).sqrt())
}

/// Smallest gap between the best treatment's bottleneck z-value and any
/// other treatment's bottleneck z-value (∞ when A = 1).
pub fn delta_min(instance: &Instance) -> f64 {
    Prepared::new(instance).delta_min
}

/// H₃′ = (Σ_a max_i ρ²_{a,i} + max_{a,i} λ²_{a,i}) / Δ²_min.
pub fn h3_prime(instance: &Instance) -> f64 {
    let p = Prepared::new(instance);
    let rho: f64 = p.max_rho_sq[1..].iter().sum();
    let lambda = p.max_lambda_sq[1..].iter().copied().fold(0.0, f64::max);
    (rho + lambda) / (p.delta_min * p.delta_min)
}

/// H₃ by exhaustive subset enumeration.
pub fn h3(instance: &Instance, max_enumeration: usize) -> Result<ComplexityReport> {
    report(instance, None, max_enumeration)
}

/// H̃₃ at budget T.
pub fn h3_tilde(instance: &Instance, budget: u64, max_enumeration: usize) -> Result<f64> {
    check_cap(instance, max_enumeration)?;
    let p = Prepared::new(instance);
    let corr = tilde_correction(&p, instance.num_treatments(), budget);
    Ok(enumerate(&p, Some(corr)).map_or(0.0, |(v, _)| v.recip()))
}

/// All diagnostics; H̃₃ and Γ_S need a budget.
pub fn report(instance: &Instance, budget: Option<u64>, max_enumeration: usize) -> Result<ComplexityReport> {
    check_cap(instance, max_enumeration)?;
    let p = Prepared::new(instance);
    let found = enumerate(&p, None);
    let (h3, argmin_subset) = match found {
        Some((v, mask)) => {
            let mut members = Vec::new();
            members_of(&p.suboptimal(), mask, &mut members);
            members.push(p.best);
            members.sort_unstable();
            (v.recip(), members)
        }
        None => (0.0, Vec::new()),
    };
    let h3_tilde = budget.map(|t| h3_tilde(instance, t, max_enumeration)).transpose()?;
    let gamma_s = budget.filter(|_| !argmin_subset.is_empty()).map(|t| {
        let (r, l) = p.scales(argmin_subset.iter().copied());
        (r + l) * (num_stages(instance.num_treatments()) as f64 / t as f64).sqrt()
    });
    Ok(ComplexityReport {
        best: p.best,
        h3,
        h3_prime: h3_prime(instance),
        h3_tilde,
        delta_min: p.delta_min,
        argmin_subset,
        gamma_s,
    })
}

/// 6·M·⌈log₂A⌉·exp(−T/(c·h·⌈log₂A⌉)), reported unclamped.
pub fn error_bound(
    budget: u64,
    num_treatments: usize,
    num_metrics: usize,
    h: f64,
    variant: BoundVariant,
) -> ErrorBound {
    let l = num_stages(num_treatments) as f64;
    let c = match variant {
        BoundVariant::Theorem1 | BoundVariant::Theorem2Stated => 2.0,
        BoundVariant::Theorem2 => 8.0,
    };
    let value = 6.0 * num_metrics as f64 * l * (-(budget as f64) / (c * h * l)).exp();
    ErrorBound { value, vacuous: value >= 1.0 }
}
