//! Experiment presets, the (z, ρ²) constructor and the JSON instance format.
//!
//! File format (`"format": 1`), row 0 is control:
//!
//! ```json
//! {
//!   "format": 1,
//!   "num_treatments": 2,
//!   "num_metrics": 1,
//!   "means": [[0.0], [0.3], [0.1]],
//!   "stddevs": [[1.0], [1.0], [2.0]],
//!   "validation": { "variant": "non_bayesian", "delta": [0.05], "horizon": 1000 }
//! }
//! ```
//!
//! Bayesian validation replaces `delta` with `q` and `tau`.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validation_constant, Instance, ValidationConfig, ValidationVariant};

pub const FORMAT_VERSION: u32 = 1;

/// Builds an instance whose z-values and relative variances are exactly the
/// given ones. `z` and `rho_sq` are A×M (row k is treatment k+1).
pub fn from_z_parameterization(
    z: &[Vec<f64>],
    rho_sq: &[Vec<f64>],
    control_means: &[f64],
    control_stddevs: &[f64],
    validation: ValidationConfig,
) -> Result<Instance> {
    let m = control_means.len();
    if z.len() != rho_sq.len() || control_stddevs.len() != m {
        return Err(Error::invalid("z, rho_sq and control vectors disagree in shape"));
    }
    let mut means = vec![control_means.to_vec()];
    let mut stddevs = vec![control_stddevs.to_vec()];
    for (a, (z_row, r_row)) in z.iter().zip(rho_sq).enumerate() {
        if z_row.len() != m || r_row.len() != m {
            return Err(Error::invalid(format!("row {a} does not have {m} metrics")));
        }
        let (mut mu, mut sd) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for i in 0..m {
            let r = r_row[i];
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::invalid(format!(
                    "rho_sq[{a}][{i}] = {r} must lie in (0, 1); 1 would need infinite variance"
                )));
            }
            let s0 = control_stddevs[i];
            let sa = s0 * (r / (1.0 - r)).sqrt();
            let xi = validation_constant(&validation, sa, s0, i)?;
            mu.push(control_means[i] + (z_row[i] - xi) * (sa * sa + s0 * s0).sqrt());
            sd.push(sa);
        }
        means.push(mu);
        stddevs.push(sd);
    }
    Instance::new(means, stddevs, validation)
}

/// Named experiment setups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// 16 treatments, 3 metrics, variances heterogeneous across metrics only.
    Exp1,
    /// 27 single-metric treatments with fixed z-values and σ_a = 1 + a^l.
    Exp2 { l: f64 },
    /// Heterogeneous relative variances across treatments and metrics; only
    /// the best treatment beats control on every metric.
    Exp3 { treatments: usize, seed: u64 },
    /// `Exp3` with every z-value lowered by 0.1: no treatment beats control
    /// on every metric.
    Exp3Null { treatments: usize, seed: u64 },
    /// `small_arms + 2` arms: control and the best treatment have a large
    /// standard deviation, the other treatments a small one. Neyman
    /// allocation spends too much on the small arms.
    NeymanGap { small_arms: usize, sigma_big: f64, sigma_small: f64 },
    /// Two treatments under Bayesian validation: T1 has the better worst
    /// metric, T2 the better joint pass probability.
    Table1,
}

pub const PRESET_NAMES: &[&str] = &["exp1", "exp2", "exp3", "exp3_null", "neyman_gap", "table1"];

/// Optional knobs for [`Preset::from_name`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PresetOptions {
    pub l: Option<f64>,
    pub treatments: Option<usize>,
    pub seed: Option<u64>,
    pub sigma_big: Option<f64>,
    pub sigma_small: Option<f64>,
}

impl Preset {
    pub const EXP3_TREATMENTS: usize = 128;
    pub const NEYMAN_SMALL_ARMS: usize = 20;
    pub const NEYMAN_SIGMA_BIG: f64 = 4.0;
    pub const NEYMAN_SIGMA_SMALL: f64 = 1.0;

    pub fn from_name(name: &str, opts: PresetOptions) -> Result<Self> {
        let seed = opts.seed.unwrap_or(0);
        Ok(match name {
            "exp1" => Preset::Exp1,
            "exp2" => Preset::Exp2 { l: opts.l.unwrap_or(0.0) },
            "exp3" => Preset::Exp3 { treatments: opts.treatments.unwrap_or(Self::EXP3_TREATMENTS), seed },
            "exp3_null" => Preset::Exp3Null { treatments: opts.treatments.unwrap_or(Self::EXP3_TREATMENTS), seed },
            "neyman_gap" => Preset::NeymanGap {
                small_arms: opts.treatments.unwrap_or(Self::NEYMAN_SMALL_ARMS),
                sigma_big: opts.sigma_big.unwrap_or(Self::NEYMAN_SIGMA_BIG),
                sigma_small: opts.sigma_small.unwrap_or(Self::NEYMAN_SIGMA_SMALL),
            },
            "table1" => Preset::Table1,
            other => return Err(Error::UnknownPreset(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Exp1 => "exp1",
            Preset::Exp2 { .. } => "exp2",
            Preset::Exp3 { .. } => "exp3",
            Preset::Exp3Null { .. } => "exp3_null",
            Preset::NeymanGap { .. } => "neyman_gap",
            Preset::Table1 => "table1",
        }
    }

    /// Same preset with the heterogeneity level replaced (exp2 only).
    pub fn with_l(self, l: f64) -> Result<Self> {
        match self {
            Preset::Exp2 { .. } => Ok(Preset::Exp2 { l }),
            other => Err(Error::invalid(format!("preset `{}` has no heterogeneity level", other.name()))),
        }
    }

    pub fn build(&self) -> Result<Instance> {
        match *self {
            Preset::Exp1 => Ok(exp1()),
            Preset::Exp2 { l } => exp2(l),
            Preset::Exp3 { treatments, seed } => exp3(treatments, seed, 0.0),
            Preset::Exp3Null { treatments, seed } => exp3(treatments, seed, -0.1),
            Preset::NeymanGap { small_arms, sigma_big, sigma_small } => neyman_gap(small_arms, sigma_big, sigma_small),
            Preset::Table1 => table1(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Exp2 { l } => write!(f, "exp2(l={l})"),
            Preset::Exp3 { treatments, seed } | Preset::Exp3Null { treatments, seed } => {
                write!(f, "{}(A={treatments}, seed={seed})", self.name())
            }
            Preset::NeymanGap { small_arms, sigma_big, sigma_small } => {
                write!(f, "neyman_gap(A={small_arms}, Σ={sigma_big}, σ={sigma_small})")
            }
            _ => f.write_str(self.name()),
        }
    }
}

/// Default exp1/exp2/exp3 one-sided test level.
pub const DEFAULT_DELTA: f64 = 0.05;
pub const EXP1_HORIZON: u64 = 1000;
pub const EXP2_HORIZON: u64 = 100;
pub const EXP3_HORIZON: u64 = 2000;
/// With T_v = 2000 any δ above ≈ 0.057 puts ξ above −0.05, so the z = −0.05
/// metrics are genuinely worse than control: the best exp3 treatment is then
/// the only one beating control everywhere, and no exp3_null treatment does.
pub const EXP3_DELTA: f64 = 0.1;

pub fn exp1() -> Instance {
    let best = [2.4697, 1.5556, 1.1180];
    let rest = [2.0125, 1.6971, 1.3416];
    let sd = [2.0, 1.0, 0.5];
    let mut means = vec![vec![0.0; 3], best.to_vec()];
    means.extend(std::iter::repeat_n(rest.to_vec(), 15));
    let mut stddevs = vec![vec![1.0; 3]];
    stddevs.extend(std::iter::repeat_n(sd.to_vec(), 16));
    let validation = ValidationConfig::non_bayesian(vec![DEFAULT_DELTA; 3], EXP1_HORIZON).expect("valid config");
    Instance::new(means, stddevs, validation).expect("valid preset")
}

pub fn exp2(l: f64) -> Result<Instance> {
    if !(0.0..=5.0).contains(&l) {
        return Err(Error::invalid(format!("heterogeneity level l = {l} outside [0, 5]")));
    }
    let a = 27;
    let validation = ValidationConfig::non_bayesian(vec![DEFAULT_DELTA], EXP2_HORIZON)?;
    let mut means = vec![vec![0.0]];
    let mut stddevs = vec![vec![1.0]];
    for k in 1..=a {
        let sa = 1.0 + (k as f64).powf(l);
        let z = 0.3 - 0.1 * (k as f64).sqrt();
        let xi = validation_constant(&validation, sa, 1.0, 0)?;
        means.push(vec![(z - xi) * (sa * sa + 1.0).sqrt()]);
        stddevs.push(vec![sa]);
    }
    Instance::new(means, stddevs, validation)
}

/// exp3 family; `shift` is added to every z-value.
fn exp3(treatments: usize, seed: u64, shift: f64) -> Result<Instance> {
    if treatments < 2 {
        return Err(Error::invalid("exp3 needs at least two treatments"));
    }
    let base: [f64; 3] = [0.8, 0.5, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho_sq: Vec<Vec<f64>> = (0..treatments)
        .map(|_| base.iter().map(|b| (b + rng.random_range(-0.1..=0.1f64)).clamp(0.05, 0.95)).collect())
        .collect();
    let best = [0.15, 0.15, 0.05];
    let rest = [-0.05, 0.25, 0.25];
    let z: Vec<Vec<f64>> =
        (0..treatments).map(|k| if k == 0 { &best } else { &rest }.iter().map(|v| v + shift).collect()).collect();
    let validation = ValidationConfig::non_bayesian(vec![EXP3_DELTA; 3], EXP3_HORIZON)?;
    from_z_parameterization(&z, &rho_sq, &[0.0; 3], &[1.0; 3], validation)
}

/// z-gap between the best treatment and every other one.
pub const NEYMAN_GAP_Z: f64 = 0.25;

/// One metric and `small_arms + 2` arms. Control and treatment 1 have
/// standard deviation `sigma_big`; treatments 2..=small_arms+1 have
/// `sigma_small`. Every arm except treatment 1 has mean 0, and treatment 1
/// leads every other treatment's z-value by [`NEYMAN_GAP_Z`].
pub fn neyman_gap(small_arms: usize, sigma_big: f64, sigma_small: f64) -> Result<Instance> {
    if small_arms < 1 {
        return Err(Error::invalid("neyman_gap needs at least one small-variance arm"));
    }
    if !(sigma_big > 0.0 && sigma_small > 0.0) {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    let validation = ValidationConfig::non_bayesian(vec![DEFAULT_DELTA], EXP2_HORIZON)?;
    let sd = |k: usize| if k <= 1 { sigma_big } else { sigma_small };
    // Non-Bayesian ξ is common to all treatments, so z-gaps are SNR gaps and
    // the mean-0 treatments sit exactly at z = ξ.
    let mean = |k: usize| if k == 1 { NEYMAN_GAP_Z * 2f64.sqrt() * sigma_big } else { 0.0 };
    Instance::new(
        (0..=small_arms + 1).map(|k| vec![mean(k)]).collect(),
        (0..=small_arms + 1).map(|k| vec![sd(k)]).collect(),
        validation,
    )
}

pub fn table1() -> Result<Instance> {
    Instance::new(
        vec![vec![0.0, 0.0], vec![0.6, 0.6], vec![-0.2, 6.0]],
        vec![vec![10.0, 10.0], vec![10.0, 10.0], vec![30.0, 10.0]],
        ValidationConfig::bayesian(vec![0.67, 0.67], vec![10.0, 10.0], 100)?,
    )
}

// ---- file format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(default = "default_format")]
    format: u32,
    num_treatments: usize,
    num_metrics: usize,
    means: Vec<Vec<f64>>,
    stddevs: Vec<Vec<f64>>,
    validation: ValidationFile,
}

fn default_format() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
enum ValidationFile {
    NonBayesian { delta: Vec<f64>, horizon: u64 },
    Bayesian { q: Vec<f64>, tau: Vec<f64>, horizon: u64 },
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        let v = inst.validation();
        let validation = match &v.variant {
            ValidationVariant::NonBayesian { delta } => {
                ValidationFile::NonBayesian { delta: delta.clone(), horizon: v.horizon }
            }
            ValidationVariant::Bayesian { q, tau } => {
                ValidationFile::Bayesian { q: q.clone(), tau: tau.clone(), horizon: v.horizon }
            }
        };
        InstanceFile {
            format: FORMAT_VERSION,
            num_treatments: inst.num_treatments(),
            num_metrics: inst.num_metrics(),
            means: inst.mean_rows(),
            stddevs: inst.stddev_rows(),
            validation,
        }
    }
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance> {
        let schema = |path: &str, message: String| Error::Schema { path: path.into(), message };
        if self.format != FORMAT_VERSION {
            return Err(schema("format", format!("unsupported version {}", self.format)));
        }
        if self.means.len() != self.num_treatments + 1 {
            return Err(schema(
                "means",
                format!("expected {} rows (control + treatments), found {}", self.num_treatments + 1, self.means.len()),
            ));
        }
        for (name, rows) in [("means", &self.means), ("stddevs", &self.stddevs)] {
            if let Some(k) = rows.iter().position(|r| r.len() != self.num_metrics) {
                return Err(schema(&format!("{name}[{k}]"), format!("expected {} metrics", self.num_metrics)));
            }
        }
        let validation = match self.validation {
            ValidationFile::NonBayesian { delta, horizon } => {
                ValidationConfig { variant: ValidationVariant::NonBayesian { delta }, horizon }
            }
            ValidationFile::Bayesian { q, tau, horizon } => {
                ValidationConfig { variant: ValidationVariant::Bayesian { q, tau }, horizon }
            }
        };
        Instance::new(self.means, self.stddevs, validation)
    }
}

pub fn to_json(instance: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceFile::from(instance)).expect("instance serializes")
}

pub fn from_json(text: &str) -> Result<Instance> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: InstanceFile = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Schema { path: e.path().to_string(), message: e.inner().to_string() })?;
    file.into_instance()
}

pub fn save(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let mut text = to_json(instance);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Instance> {
    from_json(&fs::read_to_string(path)?)
}

/// One row of the `table1` comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub treatment: usize,
    pub pass: Vec<f64>,
    pub joint: f64,
    pub min: f64,
}

/// Reference (metric 1, metric 2, joint) pass probabilities for T1 and T2,
/// rounded to two decimals.
pub const TABLE1_EXPECTED: [[f64; 3]; 2] = [[0.44, 0.44, 0.19], [0.30, 0.99, 0.30]];
pub const TABLE1_TOLERANCE: f64 = 0.005;

/// Analytic pass probabilities for both `table1` treatments, optionally with a
/// different posterior threshold q.
pub fn table1_rows(q: Option<f64>) -> Result<Vec<Table1Row>> {
    let mut inst = table1()?;
    if let Some(q) = q {
        inst = inst.with_validation(ValidationConfig::bayesian(vec![q; 2], vec![10.0; 2], 100)?)?;
    }
    inst.treatments()
        .map(|a| {
            let pass: Vec<f64> = (0..2).map(|i| crate::model::pass_probability(&inst, a, i)).collect::<Result<_>>()?;
            let joint = pass.iter().product();
            let min = pass.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(Table1Row { treatment: a, pass, joint, min })
        })
        .collect()
}

/// Largest absolute deviation from the reference grid.
pub fn table1_max_deviation(rows: &[Table1Row]) -> f64 {
    rows.iter()
        .zip(TABLE1_EXPECTED)
        .flat_map(|(r, want)| [r.pass[0] - want[0], r.pass[1] - want[1], r.joint - want[2]])
        .fold(0.0, |acc, d| acc.max(d.abs()))
}
