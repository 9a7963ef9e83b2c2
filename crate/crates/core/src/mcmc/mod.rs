//! Langevin moves and replica exchange.
//!
//! Chains cache their *base* (T = 1) energy and gradient; the tempered values
//! are those divided by the chain temperature. Swaps exchange positions and
//! caches between levels, never temperatures.

mod refine;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{Provenance, RowCache, SampleBuffer};
use crate::error::{check_dim, Error, Result};
use crate::rng::{lane, StreamRng};
use crate::targets::EnergyTarget;

pub use refine::{local_pt_refine, RefineMode, RefineStats};

/// One chain at one temperature with coherent energy and gradient caches.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub temperature: f64,
    /// Base energy `E(x)`.
    pub energy: f64,
    /// Base gradient `grad E(x)`.
    pub gradient: Vec<f64>,
}

impl ChainState {
    /// Evaluates the target at `x` (one joint call).
    pub fn new(target: &EnergyTarget, x: Vec<f64>, temperature: f64) -> Result<Self> {
        let mut gradient = vec![0.0; x.len()];
        let energy = target.energy_and_gradient(&x, &mut gradient)?;
        Ok(Self { x, temperature, energy, gradient })
    }

    /// Builds a state from a buffer row, evaluating only what is not cached.
    pub fn from_cached(
        target: &EnergyTarget,
        x: Vec<f64>,
        temperature: f64,
        cache: &RowCache,
    ) -> Result<Self> {
        match (cache.energy, &cache.gradient) {
            (Some(energy), Some(g)) => {
                check_dim(x.len(), g.len())?;
                Ok(Self { x, temperature, energy, gradient: g.clone() })
            }
            (Some(energy), None) => {
                let gradient = target.gradient(&x)?;
                Ok(Self { x, temperature, energy, gradient })
            }
            (None, Some(g)) => {
                let energy = target.energy(&x)?;
                Ok(Self { x, temperature, energy, gradient: g.clone() })
            }
            (None, None) => Self::new(target, x, temperature),
        }
    }

    pub fn tempered_energy(&self) -> f64 {
        self.energy / self.temperature
    }

    pub fn row_cache(&self) -> RowCache {
        RowCache { energy: Some(self.energy), gradient: Some(self.gradient.clone()) }
    }
}

/// `log q(to | from)` of the Langevin proposal, up to a constant.
fn log_proposal(to: &[f64], from: &[f64], from_grad: &[f64], temperature: f64, step: f64) -> f64 {
    let ss: f64 = to
        .iter()
        .zip(from)
        .zip(from_grad)
        .map(|((a, b), g)| {
            let r = a - b + step * g / temperature;
            r * r
        })
        .sum();
    -ss / (4.0 * step)
}

/// One Metropolis-adjusted Langevin step on `E / T`. Returns whether the
/// proposal was accepted. A zero step size is the identity move.
pub fn mala_step<R: Rng + ?Sized>(
    target: &EnergyTarget,
    state: &mut ChainState,
    step: f64,
    rng: &mut R,
) -> Result<bool> {
    if step < 0.0 || !step.is_finite() {
        return Err(Error::InvalidConfig(format!("MALA step must be >= 0, got {step}")));
    }
    if step == 0.0 {
        return Ok(true);
    }
    let t = state.temperature;
    let noise = (2.0 * step).sqrt();
    let proposal: Vec<f64> = state
        .x
        .iter()
        .zip(&state.gradient)
        .map(|(x, g)| {
            let xi: f64 = rng.sample(StandardNormal);
            x - step * g / t + noise * xi
        })
        .collect();
    let u: f64 = rng.random();
    if proposal.iter().any(|v| !v.is_finite()) {
        return Ok(false);
    }
    let mut grad = vec![0.0; proposal.len()];
    let energy = target.energy_and_gradient(&proposal, &mut grad)?;
    if !energy.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Ok(false);
    }
    let log_alpha = -(energy - state.energy) / t
        + log_proposal(&state.x, &proposal, &grad, t, step)
        - log_proposal(&proposal, &state.x, &state.gradient, t, step);
    if log_alpha.is_nan() || u.ln() >= log_alpha {
        return Ok(false);
    }
    state.x = proposal;
    state.energy = energy;
    state.gradient = grad;
    Ok(true)
}

/// Replica-exchange acceptance `min(1, exp(-(E_j - E_i)(1/T_i - 1/T_j)))` on
/// base energies.
pub fn pt_swap_probability(e_i: f64, e_j: f64, t_i: f64, t_j: f64) -> f64 {
    let log_p = -(e_j - e_i) * (1.0 / t_i - 1.0 / t_j);
    if log_p.is_nan() {
        return 0.0;
    }
    log_p.min(0.0).exp().clamp(0.0, 1.0)
}

/// Exchanges positions and caches of two chains; temperatures stay put.
pub fn swap_states(a: &mut ChainState, b: &mut ChainState) {
    std::mem::swap(&mut a.x, &mut b.x);
    std::mem::swap(&mut a.energy, &mut b.energy);
    std::mem::swap(&mut a.gradient, &mut b.gradient);
}

/// Attempts a swap between two levels; returns whether it happened.
pub fn try_swap<R: Rng + ?Sized>(a: &mut ChainState, b: &mut ChainState, rng: &mut R) -> bool {
    let p = pt_swap_probability(a.energy, b.energy, a.temperature, b.temperature);
    let u: f64 = rng.random();
    if u < p {
        swap_states(a, b);
        true
    } else {
        false
    }
}

/// Per-level step sizes and the swap cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtSchedule {
    pub swap_interval: usize,
    /// One step size per level, in the order of the temperatures passed along.
    pub step_sizes: Vec<f64>,
}

impl PtSchedule {
    /// Step size `base_step * T` at each temperature.
    pub fn scaled(base_step: f64, temperatures: &[f64], swap_interval: usize) -> Self {
        Self { swap_interval, step_sizes: temperatures.iter().map(|t| base_step * t).collect() }
    }
}

/// Replica counts and recording cadence of a PT run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtOptions {
    /// Independent replicas, each holding one chain per temperature.
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    /// Record every `interval`-th state after burn-in.
    pub interval: usize,
    /// Chains start from `N(0, init_scale^2 I)`.
    pub init_scale: f64,
}

/// Acceptance diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PtStats {
    pub mala_acceptance: Vec<f64>,
    pub swap_acceptance: Vec<f64>,
    pub swap_attempts: Vec<u64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Tally {
    pub moves: Vec<u64>,
    pub accepted: Vec<u64>,
    pub swaps: Vec<u64>,
    pub swaps_accepted: Vec<u64>,
}

impl Tally {
    pub fn new(levels: usize) -> Self {
        let pairs = levels.saturating_sub(1);
        Self {
            moves: vec![0; levels],
            accepted: vec![0; levels],
            swaps: vec![0; pairs],
            swaps_accepted: vec![0; pairs],
        }
    }

    pub fn merge(mut self, other: &Tally) -> Self {
        let add = |a: &mut Vec<u64>, b: &Vec<u64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.moves, &other.moves);
        add(&mut self.accepted, &other.accepted);
        add(&mut self.swaps, &other.swaps);
        add(&mut self.swaps_accepted, &other.swaps_accepted);
        self
    }

    pub fn stats(&self) -> PtStats {
        let rate = |a: &[u64], n: &[u64]| {
            a.iter().zip(n).map(|(a, n)| if *n == 0 { 0.0 } else { *a as f64 / *n as f64 }).collect()
        };
        PtStats {
            mala_acceptance: rate(&self.accepted, &self.moves),
            swap_acceptance: rate(&self.swaps_accepted, &self.swaps),
            swap_attempts: self.swaps.clone(),
        }
    }
}

/// Advances one replica (a chain per level) by one sweep: a MALA move at every
/// level, then on swap steps an even/odd alternating pass over adjacent pairs.
pub(crate) fn sweep(
    target: &EnergyTarget,
    levels: &mut [ChainState],
    schedule: &PtSchedule,
    step_index: usize,
    tally: &mut Tally,
    rng: &mut StreamRng,
) -> Result<()> {
    for (l, state) in levels.iter_mut().enumerate() {
        tally.moves[l] += 1;
        if mala_step(target, state, schedule.step_sizes[l], rng)? {
            tally.accepted[l] += 1;
        }
    }
    if levels.len() > 1 && schedule.swap_interval > 0 && step_index.is_multiple_of(schedule.swap_interval) {
        let parity = (step_index / schedule.swap_interval) % 2;
        let mut p = parity;
        while p + 1 < levels.len() {
            let (lo, hi) = levels.split_at_mut(p + 1);
            tally.swaps[p] += 1;
            if try_swap(&mut lo[p], &mut hi[0], rng) {
                tally.swaps_accepted[p] += 1;
            }
            p += 2;
        }
    }
    Ok(())
}

/// Result of [`run_pt`]: one buffer per temperature, in input order.
#[derive(Debug, Clone)]
pub struct PtRun {
    pub buffers: Vec<SampleBuffer>,
    pub stats: PtStats,
}

/// Runs `chains` independent replicas of parallel tempering over
/// `temperatures` for `steps` sweeps. State `s` (1-based) is recorded when
/// `s > burn_in` and `(s - burn_in) % interval == 0`.
pub fn run_pt(
    target: &EnergyTarget,
    temperatures: &[f64],
    schedule: &PtSchedule,
    opts: &PtOptions,
    seed: u64,
) -> Result<PtRun> {
    if temperatures.len() < 2 {
        return Err(Error::InvalidConfig("parallel tempering needs at least 2 temperatures".into()));
    }
    if temperatures.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidConfig("temperatures must be positive".into()));
    }
    check_dim(temperatures.len(), schedule.step_sizes.len())?;
    if opts.steps == 0 || opts.chains == 0 || opts.interval == 0 {
        return Err(Error::InvalidConfig(
            "PT needs positive steps, chains and subsampling interval".into(),
        ));
    }
    let dim = target.dim();
    let levels = temperatures.len();
    type Kept = Vec<Vec<(Vec<f64>, RowCache)>>;
    let replicas: Vec<Result<(Kept, Tally)>> = (0..opts.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = lane(seed, chain as u64);
            let mut states = temperatures
                .iter()
                .map(|&t| {
                    let x: Vec<f64> = (0..dim)
                        .map(|_| opts.init_scale * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    ChainState::new(target, x, t)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut tally = Tally::new(levels);
            let mut records = vec![Vec::new(); levels];
            for s in 1..=opts.steps {
                sweep(target, &mut states, schedule, s, &mut tally, &mut rng)?;
                if s > opts.burn_in && (s - opts.burn_in).is_multiple_of(opts.interval) {
                    for (rec, st) in records.iter_mut().zip(&states) {
                        rec.push((st.x.clone(), st.row_cache()));
                    }
                }
            }
            Ok((records, tally))
        })
        .collect();

    let mut total = Tally::new(levels);
    let mut per_level: Vec<(Vec<f64>, Vec<Provenance>, Vec<RowCache>)> =
        vec![Default::default(); levels];
    for (chain, replica) in replicas.into_iter().enumerate() {
        let (records, tally) = replica?;
        total = total.merge(&tally);
        for (l, rec) in records.into_iter().enumerate() {
            for (x, cache) in rec {
                per_level[l].0.extend(x);
                per_level[l].1.push(Provenance::InitialPt { chain });
                per_level[l].2.push(cache);
            }
        }
    }
    let buffers = per_level
        .into_iter()
        .zip(temperatures)
        .map(|((flat, prov, cache), &t)| {
            let n = prov.len();
            let samples = Array2::from_shape_vec((n, dim), flat)
                .map_err(|e| Error::Format(e.to_string()))?;
            SampleBuffer::with_cache(t, samples, prov, cache)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PtRun { buffers, stats: total.stats() })
}
