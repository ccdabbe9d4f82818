//! Simulation of fixed-budget, multi-metric best-treatment identification
//! followed by an A/B validation test.
//!
//! An [`Instance`] holds a control arm and `A` treatments with Gaussian
//! rewards on `M` metrics. Exploration algorithms from [`halving`] spend a
//! fixed budget to recommend one treatment; [`validate`] then runs the
//! downstream test, and [`harness`] repeats the whole pipeline many times.

pub mod alloc;
pub mod complexity;
pub mod error;
pub mod halving;
pub mod harness;
pub mod instances;
pub mod model;
pub mod normal;
pub mod rewards;
pub mod validate;

pub use error::{Error, Result};
pub use halving::{AlgorithmSpec, ExplorationResult, StageStats};
pub use harness::{ExperimentConfig, MonteCarloReport};
pub use model::{Instance, ValidationConfig, ValidationVariant, ZProfile};
pub use rewards::{RewardModel, RewardSource};
