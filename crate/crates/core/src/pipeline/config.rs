//! Run configuration: a JSON document in which every field is addressable by
//! a dotted key, with unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::{NoiseSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::ladder::{LadderKind, TemperatureLadder};
use crate::mcmc::RefineMode;
use crate::network::NetworkConfig;
use crate::targets::TargetSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    #[serde(default)]
    pub kind: LadderKind,
    pub t_min: f64,
    pub t_max: f64,
    pub levels: usize,
}

impl LadderConfig {
    pub fn build(&self) -> Result<TemperatureLadder> {
        TemperatureLadder::new(self.kind, self.t_min, self.t_max, self.levels)
    }
}

/// Parallel tempering at the two hottest temperatures that seeds the first
/// two buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPtConfig {
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub interval: usize,
    pub swap_interval: usize,
    /// MALA step size at `T = 1`; level `T` uses `step_size * T`.
    pub step_size: f64,
    #[serde(default = "unit")]
    pub init_scale: f64,
}

/// Local two-temperature tempering after each extrapolation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub steps: usize,
    pub step_size: f64,
    #[serde(default = "unit_interval")]
    pub swap_interval: usize,
    #[serde(default)]
    pub mode: RefineMode,
}

/// Which denoiser family is trained at each level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// MLP denoiser fitted by denoising score matching.
    Network {
        #[serde(default)]
        network: NetworkConfig,
    },
    /// Closed-form denoiser of an isotropic centred Gaussian whose variance is
    /// fitted to the buffer. Exact for Gaussian targets.
    GaussianFit,
    /// Exact tempered-Gaussian denoiser at each level's temperature. Gaussian
    /// targets only.
    TemperedGaussian,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Network { network: NetworkConfig::default() }
    }
}

/// Pipeline variants that switch off one ingredient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Sample the next level from the colder of the two models (`w = 0`).
    NoGuidance,
    /// Keep raw guided samples; no weighting or resampling.
    NoIs,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "no_guidance" => Ok(Ablation::NoGuidance),
            "no_is" => Ok(Ablation::NoIs),
            _ => Err(Error::InvalidConfig(format!("unknown ablation `{s}` (no-guidance | no-is)"))),
        }
    }
}

/// Full-ladder PT followed by one diffusion model at the coldest level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub ladder: LadderConfig,
    pub chains: usize,
    pub swap_interval: usize,
    pub step_size: f64,
    /// Sweeps per chain. Ignored when `budget` is set.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Density-call budget; steps are derived as `budget / (levels * chains) - 1`.
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default = "default_burn_in_fraction")]
    pub burn_in_fraction: f64,
    /// Training iterations for the single model; defaults to the main setting.
    #[serde(default)]
    pub iterations: Option<usize>,
}

/// Sample counts and options for evaluation against reference samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_count")]
    pub samples: usize,
    #[serde(default = "default_eval_count")]
    pub reference: usize,
    /// Align particle configurations (rotation and translation) for W2.
    #[serde(default)]
    pub aligned: bool,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Seed of the evaluation streams; derived from the run seed if unset.
    #[serde(default)]
    pub seed: Option<u64>,
    /// CSV of reference samples, for targets without an exact sampler.
    #[serde(default)]
    pub reference_file: Option<std::path::PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: default_eval_count(),
            reference: default_eval_count(),
            aligned: false,
            bins: default_bins(),
            seed: None,
            reference_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub target: TargetSpec,
    #[serde(default)]
    pub seed: u64,
    pub ladder: LadderConfig,
    pub buffer_size: usize,
    pub initial_pt: InitialPtConfig,
    pub refine: RefineConfig,
    /// Truncation quantile of the importance weights.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// Target levels (1 = coldest) generated without importance resampling.
    #[serde(default)]
    pub skip_resampling: Vec<usize>,
    #[serde(default)]
    pub model: ModelConfig,
    pub training: TrainConfig,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default = "unit_interval")]
    pub hutchinson_probes: usize,
    #[serde(default)]
    pub ablation: Option<Ablation>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

fn unit() -> f64 {
    1.0
}
fn unit_interval() -> usize {
    1
}
fn default_truncation() -> f64 {
    0.8
}
fn default_burn_in_fraction() -> f64 {
    0.1
}
fn default_eval_count() -> usize {
    2000
}
fn default_bins() -> usize {
    200
}
fn default_name() -> String {
    "run".into()
}

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    /// Reads a config file and applies `key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.ladder.build()?;
        if self.ladder.levels < 3 {
            return bad(format!("the progressive sampler needs at least 3 temperatures, got {}", self.ladder.levels));
        }
        if self.buffer_size == 0 {
            return bad("buffer_size must be positive".into());
        }
        if !(self.truncation > 0.0 && self.truncation <= 1.0) {
            return bad(format!("truncation must be in (0, 1], got {}", self.truncation));
        }
        let pt = &self.initial_pt;
        if pt.chains == 0 || pt.steps == 0 || pt.interval == 0 || pt.burn_in >= pt.steps {
            return bad("initial_pt needs positive chains, steps and interval, and burn_in < steps".into());
        }
        if !(pt.step_size > 0.0) || !(self.refine.step_size > 0.0) {
            return bad("MALA step sizes must be positive".into());
        }
        if let RefineMode::Subset { chains, thin } = self.refine.mode {
            if chains == 0 || thin == 0 {
                return bad("subset refinement needs positive chains and thinning".into());
            }
        }
        if self.skip_resampling.iter().any(|&l| l == 0 || l > self.ladder.levels - 2) {
            return bad(format!("skip_resampling levels must lie in 1..={}", self.ladder.levels - 2));
        }
        if self.training.batch_size == 0 {
            return bad("training.batch_size must be positive".into());
        }
        if self.hutchinson_probes == 0 {
            return bad("hutchinson_probes must be positive".into());
        }
        self.schedule.karras_sigmas()?;
        if let Some(b) = &self.baseline {
            b.ladder.build()?;
            if b.chains == 0 || (b.steps.is_none() && b.budget.is_none()) {
                return bad("baseline needs chains and either steps or budget".into());
            }
            if !(0.0..1.0).contains(&b.burn_in_fraction) {
                return bad("baseline.burn_in_fraction must be in [0, 1)".into());
            }
        }
        Ok(())
    }
}

/// Sets `a.b.c=value` in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise; missing objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::InvalidConfig(format!("override `{assignment}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "override `{assignment}`: `{}` is not an object",
                    segments[..i].join(".")
                )))
            }
        };
        if i + 1 == segments.len() {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        node = obj.entry(seg.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last segment")
}

/// Value at a dotted key, if present.
pub fn lookup<'a>(doc: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(doc, |node, seg| node.get(seg))
}
