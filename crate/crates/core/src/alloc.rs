//! Per-stage pull allocations for control and the active treatments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Instance, CONTROL};

/// Aggregate relative-variance scales of an active set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetVariances {
    /// √(Σ_a max_i ρ²_{a,i}).
    pub rho_sigma: f64,
    /// √(max_{a,i} λ²_{a,i}).
    pub lambda_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageAllocation {
    pub control_pulls: u64,
    pub treatment_pulls: BTreeMap<usize, u64>,
    pub stage_budget: u64,
}

impl StageAllocation {
    pub fn total(&self) -> u64 {
        self.control_pulls + self.treatment_pulls.values().sum::<u64>()
    }

    /// Pull count for `arm` (0 is control); zero if the arm is not allocated.
    pub fn pulls(&self, arm: usize) -> u64 {
        if arm == CONTROL {
            self.control_pulls
        } else {
            self.treatment_pulls.get(&arm).copied().unwrap_or(0)
        }
    }
}

/// How fractional pull counts become integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Floor each share and discard the remainder.
    #[default]
    Floor,
    /// Floor, then hand the leftover pulls to the largest fractional parts.
    LargestRemainder,
    /// Floor, except that arms whose share floors to zero get one pull and
    /// the rest of the budget is re-split among the others. Identical to
    /// `Floor` whenever `Floor` starves no arm.
    MinOnePull,
}

pub(crate) fn check_active(instance: &Instance, active: &[usize]) -> Result<()> {
    if active.is_empty() {
        return Err(Error::invalid("active set is empty"));
    }
    for (k, &a) in active.iter().enumerate() {
        instance.check_treatment(a)?;
        if k > 0 && active[k - 1] >= a {
            return Err(Error::invalid("active set must be strictly increasing"));
        }
    }
    Ok(())
}

fn max_rho_sq(instance: &Instance, a: usize) -> f64 {
    (0..instance.num_metrics()).map(|i| instance.relative_variance(a, i).0).fold(0.0, f64::max)
}

pub fn set_variances(instance: &Instance, active: &[usize]) -> Result<SetVariances> {
    check_active(instance, active)?;
    let rho_sq: f64 = active.iter().map(|&a| max_rho_sq(instance, a)).sum();
    let lambda_sq = active
        .iter()
        .flat_map(|&a| (0..instance.num_metrics()).map(move |i| instance.relative_variance(a, i).1))
        .fold(0.0, f64::max);
    Ok(SetVariances { rho_sigma: rho_sq.sqrt(), lambda_sigma: lambda_sq.sqrt() })
}

/// Unrounded relative-variance allocation as budget fractions: the control
/// share followed by one share per active treatment. The shares sum to 1.
pub fn shrvar_fractions(instance: &Instance, active: &[usize]) -> Result<(f64, Vec<f64>)> {
    let sv = set_variances(instance, active)?;
    let total = sv.rho_sigma + sv.lambda_sigma;
    let control = sv.lambda_sigma / total;
    let treatments = active.iter().map(|&a| max_rho_sq(instance, a) / (sv.rho_sigma * total)).collect();
    Ok((control, treatments))
}

pub fn shrvar_allocation(instance: &Instance, active: &[usize], stage_budget: u64) -> Result<StageAllocation> {
    shrvar_allocation_with(instance, active, stage_budget, Rounding::Floor)
}

pub fn shrvar_allocation_with(
    instance: &Instance,
    active: &[usize],
    stage_budget: u64,
    rounding: Rounding,
) -> Result<StageAllocation> {
    let (control, treatments) = shrvar_fractions(instance, active)?;
    let shares: Vec<f64> = std::iter::once(control).chain(treatments).collect();
    finish(active, stage_budget, &shares, 1.0, rounding)
}

pub fn uniform_allocation(active: &[usize], stage_budget: u64) -> Result<StageAllocation> {
    if active.is_empty() {
        return Err(Error::invalid("active set is empty"));
    }
    let each = stage_budget / (active.len() as u64 + 1);
    let alloc = StageAllocation {
        control_pulls: each,
        treatment_pulls: active.iter().map(|&a| (a, each)).collect(),
        stage_budget,
    };
    if each == 0 {
        return Err(Error::InsufficientBudget { arm: CONTROL, stage_budget });
    }
    Ok(alloc)
}

/// Pulls proportional to max_i σ²; control is one more arm.
pub fn variance_allocation(instance: &Instance, active: &[usize], stage_budget: u64) -> Result<StageAllocation> {
    variance_allocation_with(instance, active, stage_budget, Rounding::Floor)
}

pub fn variance_allocation_with(
    instance: &Instance,
    active: &[usize],
    stage_budget: u64,
    rounding: Rounding,
) -> Result<StageAllocation> {
    proportional(instance, active, stage_budget, rounding, |s| s * s)
}

/// Pulls proportional to max_i σ; control is one more arm.
pub fn neyman_allocation(instance: &Instance, active: &[usize], stage_budget: u64) -> Result<StageAllocation> {
    neyman_allocation_with(instance, active, stage_budget, Rounding::Floor)
}

pub fn neyman_allocation_with(
    instance: &Instance,
    active: &[usize],
    stage_budget: u64,
    rounding: Rounding,
) -> Result<StageAllocation> {
    proportional(instance, active, stage_budget, rounding, |s| s)
}

fn proportional(
    instance: &Instance,
    active: &[usize],
    stage_budget: u64,
    rounding: Rounding,
    weight: impl Fn(f64) -> f64,
) -> Result<StageAllocation> {
    check_active(instance, active)?;
    let row_weight = |arm: usize| weight(instance.stddevs_of(arm).iter().copied().fold(0.0, f64::max));
    let shares: Vec<f64> = std::iter::once(row_weight(CONTROL)).chain(active.iter().map(|&a| row_weight(a))).collect();
    let total: f64 = shares.iter().sum();
    finish(active, stage_budget, &shares, total, rounding)
}

/// ⌊x⌋, except values within a relative 1e-12 below an integer round up, so
/// that shares like 0.3·100 computed as 29.999999999999996 give 30.
fn robust_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

/// Turns `shares[k] / total` fractions of the budget into pull counts.
/// Slot 0 is control, slot k is `active[k - 1]`.
fn finish(
    active: &[usize],
    stage_budget: u64,
    shares: &[f64],
    total: f64,
    rounding: Rounding,
) -> Result<StageAllocation> {
    let exact: Vec<f64> = shares.iter().map(|&w| w * stage_budget as f64 / total).collect();
    let mut pulls: Vec<u64> = exact.iter().map(|&x| robust_floor(x).max(0.0) as u64).collect();
    match rounding {
        Rounding::Floor => {}
        Rounding::LargestRemainder => {
            let used: u64 = pulls.iter().sum();
            let mut order: Vec<usize> = (0..pulls.len()).collect();
            order.sort_by(|&x, &y| {
                let fx = exact[x] - pulls[x] as f64;
                let fy = exact[y] - pulls[y] as f64;
                fy.total_cmp(&fx).then(x.cmp(&y))
            });
            for &k in order.iter().take(stage_budget.saturating_sub(used) as usize) {
                pulls[k] += 1;
            }
        }
        Rounding::MinOnePull if stage_budget >= shares.len() as u64 => {
            let mut pinned = vec![false; shares.len()];
            loop {
                let rest = stage_budget - pinned.iter().filter(|&&p| p).count() as u64;
                let free: f64 = shares.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(w, _)| w).sum();
                let mut changed = false;
                for k in 0..shares.len() {
                    pulls[k] = if pinned[k] { 1 } else { robust_floor(shares[k] * rest as f64 / free) as u64 };
                    if pulls[k] == 0 {
                        pinned[k] = true;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        Rounding::MinOnePull => {}
    }
    if let Some(k) = pulls.iter().position(|&n| n == 0) {
        let arm = if k == 0 { CONTROL } else { active[k - 1] };
        return Err(Error::InsufficientBudget { arm, stage_budget });
    }
    Ok(StageAllocation {
        control_pulls: pulls[0],
        treatment_pulls: active.iter().copied().zip(pulls[1..].iter().copied()).collect(),
        stage_budget,
    })
}
