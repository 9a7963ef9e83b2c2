//! Analytic unnormalized densities.
//!
//! Everything works in energies, `E(x) = -log p~(x)` up to a constant. A target
//! at temperature `T` has energy `E(x) / T`. Every counted evaluation goes
//! through [`EnergyTarget`], which owns a shared [`EvalCounter`].

mod counter;
mod gaussian;
mod lj;
mod manywell;
mod mog;
mod reference;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::StreamRng;

pub use counter::{CounterSnapshot, EvalCounter};
pub use gaussian::GaussianPotential;
pub use lj::{LennardJonesParams, LennardJonesPotential};
pub use manywell::{DoubleWellParams, ManyWellPotential};
pub use mog::MixturePotential;
pub use reference::DoubleWellSampler;

/// `softplus(1)`, the per-coordinate variance of every MoG-40 component.
pub const MOG40_VARIANCE: f64 = 1.313_261_687_518_222_8;

/// Seed the shipped MoG-40 means were drawn from (ASCII "MoG40").
pub const MOG40_SEED: u64 = 0x4d_6f_47_34_30;

const SHIPPED_MOG40: &str = include_str!("../../../../data/targets/mog40.json");
const SHIPPED_MANYWELL: &str = include_str!("../../../../data/targets/manywell.json");
const SHIPPED_LJ: &str = include_str!("../../../../data/targets/lj.json");

/// An energy function with an analytic gradient. Implementations are pure and
/// reentrant; evaluation accounting lives in [`EnergyTarget`].
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn energy(&self, x: &[f64]) -> f64;
    /// Writes the gradient into `grad` and returns the energy.
    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Which target to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        dim: usize,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    Mog40,
    Manywell {
        blocks: usize,
    },
    Lj {
        particles: usize,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::Gaussian { .. } => "gaussian",
            TargetSpec::Mog40 => "mog40",
            TargetSpec::Manywell { .. } => "manywell",
            TargetSpec::Lj { .. } => "lj",
        }
    }

    /// Particle layout `(particles, spatial_dim)` for particle systems.
    pub fn particle_layout(&self) -> Option<(usize, usize)> {
        match self {
            TargetSpec::Lj { particles } => Some((*particles, 3)),
            _ => None,
        }
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Gaussian { dim, scale } => write!(f, "gaussian:{dim}:{scale}"),
            TargetSpec::Mog40 => write!(f, "mog40"),
            TargetSpec::Manywell { blocks } => write!(f, "manywell:{blocks}"),
            TargetSpec::Lj { particles } => write!(f, "lj:{particles}"),
        }
    }
}

/// Parses `mog40`, `manywell:<blocks>`, `lj:<particles>`, `gaussian:<dim>[:<scale>]`.
impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let int = |i: usize| -> Result<usize> {
            args.get(i)
                .ok_or_else(|| Error::InvalidConfig(format!("target `{s}` needs a size argument")))?
                .parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("target `{s}`: {e}")))
        };
        match name {
            "mog40" => Ok(TargetSpec::Mog40),
            "manywell" => Ok(TargetSpec::Manywell { blocks: int(0)? }),
            "lj" => Ok(TargetSpec::Lj { particles: int(0)? }),
            "gaussian" => {
                let scale = match args.get(1) {
                    Some(v) => v
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("target `{s}`: {e}")))?,
                    None => 1.0,
                };
                Ok(TargetSpec::Gaussian { dim: int(0)?, scale })
            }
            other => Err(Error::UnknownTarget(other.to_string())),
        }
    }
}

/// Mixture parameters as stored in `data/targets/mog40.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureParams {
    pub seed: u64,
    pub half_width: f64,
    pub variance: f64,
    pub means: Vec<Vec<f64>>,
}

impl MixtureParams {
    /// Draws 40 means uniformly from `[-half_width, half_width]^2`.
    pub fn generate(seed: u64, components: usize, half_width: f64) -> Self {
        use rand::SeedableRng;
        let mut rng = StreamRng::seed_from_u64(seed);
        let means = (0..components)
            .map(|_| {
                (0..2)
                    .map(|_| rng.random_range(-half_width..half_width))
                    .collect()
            })
            .collect();
        Self { seed, half_width, variance: MOG40_VARIANCE, means }
    }
}

/// Parameter blocks for every target family.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams {
    pub mog40: MixtureParams,
    pub manywell: DoubleWellParams,
    pub lj: LennardJonesParams,
}

impl TargetParams {
    /// The parameter files compiled into the library.
    pub fn shipped() -> Self {
        Self {
            mog40: serde_json::from_str(SHIPPED_MOG40).expect("shipped mog40.json parses"),
            manywell: serde_json::from_str(SHIPPED_MANYWELL).expect("shipped manywell.json parses"),
            lj: serde_json::from_str(SHIPPED_LJ).expect("shipped lj.json parses"),
        }
    }

    /// Reads `mog40.json`, `manywell.json` and `lj.json` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |f: &str| std::fs::read_to_string(dir.join(f));
        Ok(Self {
            mog40: serde_json::from_str(&read("mog40.json")?)?,
            manywell: serde_json::from_str(&read("manywell.json")?)?,
            lj: serde_json::from_str(&read("lj.json")?)?,
        })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |f: &str, s: String| std::fs::write(dir.join(f), s + "\n");
        write("mog40.json", serde_json::to_string_pretty(&self.mog40)?)?;
        write("manywell.json", serde_json::to_string_pretty(&self.manywell)?)?;
        write("lj.json", serde_json::to_string_pretty(&self.lj)?)?;
        Ok(())
    }
}

/// An unnormalized density with evaluation accounting.
#[derive(Clone)]
pub struct EnergyTarget {
    spec: TargetSpec,
    params: Arc<TargetParams>,
    potential: Arc<dyn Potential>,
    counter: Arc<EvalCounter>,
}

impl fmt::Debug for EnergyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnergyTarget")
            .field("spec", &self.spec)
            .field("counter", &self.counter.snapshot())
            .finish()
    }
}

/// Builds a target from the shipped parameter files.
pub fn make_target(spec: &TargetSpec) -> Result<EnergyTarget> {
    make_target_with(spec, &TargetParams::shipped())
}

pub fn make_target_with(spec: &TargetSpec, params: &TargetParams) -> Result<EnergyTarget> {
    let potential: Arc<dyn Potential> = match *spec {
        TargetSpec::Gaussian { dim, scale } => {
            if dim == 0 || !(scale > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "gaussian needs dim > 0 and scale > 0, got {dim}, {scale}"
                )));
            }
            Arc::new(GaussianPotential { dim, scale })
        }
        TargetSpec::Mog40 => {
            Arc::new(MixturePotential::new(params.mog40.means.clone(), params.mog40.variance))
        }
        TargetSpec::Manywell { blocks } => {
            if blocks == 0 {
                return Err(Error::InvalidConfig("manywell needs at least one block".into()));
            }
            Arc::new(ManyWellPotential { blocks, params: params.manywell })
        }
        TargetSpec::Lj { particles } => {
            if particles < 2 {
                return Err(Error::InvalidConfig("lj needs at least two particles".into()));
            }
            Arc::new(LennardJonesPotential::new(particles, params.lj))
        }
    };
    Ok(EnergyTarget {
        spec: spec.clone(),
        params: Arc::new(params.clone()),
        potential,
        counter: Arc::new(EvalCounter::new()),
    })
}

impl EnergyTarget {
    /// Wraps an arbitrary potential (used for synthetic test targets).
    pub fn from_potential(spec: TargetSpec, potential: Arc<dyn Potential>) -> Self {
        Self {
            spec,
            params: Arc::new(TargetParams::shipped()),
            potential,
            counter: Arc::new(EvalCounter::new()),
        }
    }

    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }

    pub fn name(&self) -> &'static str {
        self.spec.name()
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn params(&self) -> &TargetParams {
        &self.params
    }

    pub fn counter(&self) -> &Arc<EvalCounter> {
        &self.counter
    }

    pub fn calls(&self) -> CounterSnapshot {
        self.counter.snapshot()
    }

    /// Same density, separate counter. Metric evaluations use this so they
    /// stay outside the sampling budget.
    pub fn with_fresh_counter(&self) -> Self {
        Self { counter: Arc::new(EvalCounter::new()), ..self.clone() }
    }

    /// Uncounted access to the potential, for oracles and diagnostics only.
    pub fn potential(&self) -> &dyn Potential {
        &*self.potential
    }

    /// Base (T = 1) energy; counts one energy call.
    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.counter.record_energy(1);
        Ok(self.potential.energy(x))
    }

    /// Base gradient; counts one gradient call.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut g = vec![0.0; x.len()];
        self.counter.record_gradient(1);
        self.potential.energy_and_gradient(x, &mut g);
        Ok(g)
    }

    /// Base energy and gradient at one point; counts one energy and one
    /// gradient call (one density call).
    pub fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), grad.len())?;
        self.counter.record_joint(1);
        Ok(self.potential.energy_and_gradient(x, grad))
    }

    /// Base energies of every row; counts one energy call per row.
    pub fn energies(&self, xs: ArrayView2<f64>) -> Result<Vec<f64>> {
        check_dim(self.dim(), xs.ncols())?;
        self.counter.record_energy(xs.nrows() as u64);
        let rows: Vec<_> = xs.outer_iter().collect();
        Ok(rows
            .par_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.potential.energy(s),
                None => self.potential.energy(&r.to_vec()),
            })
            .collect())
    }

    pub fn tempered(&self, temperature: f64) -> Result<TemperedTarget> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(TemperedTarget { base: self.clone(), temperature })
    }

    /// Exact i.i.d. samples. Not counted: this is an evaluation-only path.
    pub fn reference_sample(&self, count: usize, rng: &mut StreamRng) -> Result<Array2<f64>> {
        reference::sample(self, count, rng)
    }
}

/// A target raised to the power `1/T`.
#[derive(Debug, Clone)]
pub struct TemperedTarget {
    pub base: EnergyTarget,
    pub temperature: f64,
}

impl TemperedTarget {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base.energy(x)? / self.temperature)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.base.gradient(x)?;
        g.iter_mut().for_each(|v| *v /= self.temperature);
        Ok(g)
    }

    pub fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let e = self.base.energy_and_gradient(x, grad)?;
        grad.iter_mut().for_each(|v| *v /= self.temperature);
        Ok(e / self.temperature)
    }
}

#[cfg(test)]
mod tests;
