//! Variance-exploding diffusion: noise schedule, denoising score matching,
//! Euler samplers for the probability-flow ODE and the reverse SDE, and
//! log-densities through the instantaneous change of variables.
//!
//! Everything is parameterized by the noise level `sigma` (with `sigma(t) = t`).
//! With the Tweedie score `s = (D - x) / sigma^2`, the flow is
//! `dx/dsigma = (x - D(x, sigma)) / sigma` and the log-density along it obeys
//! `d log p / dsigma = (tr J_D - d) / sigma`. The Euler samplers accumulate
//! the log-determinant of each discrete step to second order.

mod oracle;
mod train;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::Denoiser;
use crate::rng::{lane, StreamRng};

pub use oracle::GaussianOracle;
pub use train::{train_dsm, TrainConfig, TrainReport};

/// Rows per independently seeded work unit; fixed so results do not depend on
/// the thread count.
pub const CHUNK_ROWS: usize = 256;

/// Karras-style discretization of `sigma` between `sigma_max` and `sigma_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_sigma_max() -> f64 {
    40.0
}
fn default_sigma_min() -> f64 {
    0.002
}
fn default_steps() -> usize {
    100
}
fn default_rho() -> f64 {
    7.0
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_max: default_sigma_max(),
            sigma_min: default_sigma_min(),
            steps: default_steps(),
            rho: default_rho(),
        }
    }
}

impl NoiseSchedule {
    /// `steps` levels from `sigma_max` down to `sigma_min`, then a terminal 0.
    pub fn karras_sigmas(&self) -> Result<Vec<f64>> {
        if self.steps < 2 {
            return Err(Error::InvalidConfig("noise schedule needs at least 2 steps".into()));
        }
        if !(self.sigma_min > 0.0) || self.sigma_min >= self.sigma_max || !(self.rho > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise schedule needs 0 < sigma_min < sigma_max and rho > 0, got {self:?}"
            )));
        }
        let inv = 1.0 / self.rho;
        let (hi, lo) = (self.sigma_max.powf(inv), self.sigma_min.powf(inv));
        let n = self.steps;
        let mut sigmas: Vec<f64> = (0..n)
            .map(|i| match i {
                0 => self.sigma_max,
                i if i == n - 1 => self.sigma_min,
                i => (hi + i as f64 / (n - 1) as f64 * (lo - hi)).powf(self.rho),
            })
            .collect();
        sigmas.push(0.0);
        Ok(sigmas)
    }
}

/// Karras levels for the given schedule.
pub fn karras_sigmas(schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.karras_sigmas()
}

/// A posterior-mean estimator `D(x, sigma) ~ E[x_0 | x_sigma = x]`.
pub trait Denoise: Send + Sync {
    fn dim(&self) -> usize;

    /// Denoised rows and, for each tangent matrix, the row-wise directional
    /// derivatives `J_D(x_i) v_i`.
    fn denoise_with_jvps(
        &self,
        x: ArrayView2<f64>,
        sigma: f64,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)>;

    fn denoise(&self, x: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
        Ok(self.denoise_with_jvps(x, sigma, &[])?.0)
    }
}

impl Denoise for Denoiser {
    fn dim(&self) -> usize {
        Denoiser::dim(self)
    }

    fn denoise_with_jvps(
        &self,
        x: ArrayView2<f64>,
        sigma: f64,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        self.forward_with_jvps(x, sigma, tangents)
    }
}

impl<T: Denoise + ?Sized> Denoise for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn denoise_with_jvps(
        &self,
        x: ArrayView2<f64>,
        sigma: f64,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        (**self).denoise_with_jvps(x, sigma, tangents)
    }
}

/// Score view of a denoiser through Tweedie's formula.
#[derive(Debug, Clone, Copy)]
pub struct ScoreField<D> {
    pub model: D,
}

impl<D: Denoise> ScoreField<D> {
    pub fn new(model: D) -> Self {
        Self { model }
    }

    /// `(D(x, sigma) - x) / sigma^2`.
    pub fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("score needs sigma > 0, got {sigma}")));
        }
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Format(e.to_string()))?;
        let d = self.model.denoise(xv, sigma)?;
        Ok(tweedie_score(x, d.row(0).as_slice().expect("row"), sigma))
    }

    pub fn score_batch(&self, x: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("score needs sigma > 0, got {sigma}")));
        }
        let mut d = self.model.denoise(x, sigma)?;
        d -= &x;
        d /= sigma * sigma;
        Ok(d)
    }
}

/// Tweedie conversion of a denoiser output.
pub fn tweedie_score(x: &[f64], denoised: &[f64], sigma: f64) -> Vec<f64> {
    x.iter().zip(denoised).map(|(x, d)| (d - x) / (sigma * sigma)).collect()
}

/// How the Jacobian trace in the log-density is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEstimator {
    /// Mean of `eps^T J eps` over Rademacher probes.
    Hutchinson { probes: usize },
    /// Sum of all `d` basis directional derivatives.
    Exact,
}

impl Default for TraceEstimator {
    fn default() -> Self {
        TraceEstimator::Hutchinson { probes: 1 }
    }
}

fn log_normal_prior(x: ndarray::ArrayView1<f64>, sigma: f64) -> f64 {
    let d = x.len() as f64;
    let ss: f64 = x.iter().map(|v| v * v).sum();
    -0.5 * ss / (sigma * sigma) - 0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
}

fn prior_chunk(n: usize, dim: usize, sigma_max: f64, rng: &mut StreamRng) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |_| sigma_max * rng.sample::<f64, _>(StandardNormal))
}

fn chunk_sizes(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK_ROWS))
        .map(|c| (c * CHUNK_ROWS, ((c + 1) * CHUNK_ROWS).min(n)))
        .collect()
}

fn stack(chunks: Vec<Array2<f64>>, dim: usize) -> Result<Array2<f64>> {
    if chunks.is_empty() {
        return Ok(Array2::zeros((0, dim)));
    }
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))
}

fn non_finite(step: usize, sigma: f64) -> Error {
    Error::NonFinite(format!("sampler state at step {step} (sigma = {sigma})"))
}

/// Euler integration of the probability-flow ODE from `N(0, sigma_max^2 I)`.
pub fn sample_ode<D: Denoise + ?Sized>(
    model: &D,
    count: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Array2<f64>> {
    sample_sde(model, count, schedule, 0.0, seed)
}

/// Euler-Maruyama integration of the reverse-time SDE family
/// `dx = -(1 + eta^2) sigma s dsigma + eta sqrt(2 sigma) dw`; `eta = 1` is the
/// standard reverse SDE and `eta = 0` the probability-flow ODE.
pub fn sample_sde<D: Denoise + ?Sized>(
    model: &D,
    count: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    let sigmas = schedule.karras_sigmas()?;
    let dim = model.dim();
    let chunks: Vec<Result<Array2<f64>>> = chunk_sizes(count)
        .into_par_iter()
        .enumerate()
        .map(|(c, (lo, hi))| {
            let mut rng = lane(seed, c as u64);
            let mut x = prior_chunk(hi - lo, dim, schedule.sigma_max, &mut rng);
            for (i, w) in sigmas.windows(2).enumerate() {
                let (sigma, next) = (w[0], w[1]);
                let d = model.denoise(x.view(), sigma)?;
                let delta = next - sigma;
                let drift = (1.0 + eta * eta) * delta / sigma;
                let noise = eta * (2.0 * sigma * -delta).sqrt();
                ndarray::Zip::from(&mut x).and(&d).for_each(|x, d| {
                    *x += drift * (*x - d);
                    if noise > 0.0 {
                        *x += noise * rng.sample::<f64, _>(StandardNormal);
                    }
                });
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(i, sigma));
                }
            }
            Ok(x)
        })
        .collect();
    stack(chunks.into_iter().collect::<Result<Vec<_>>>()?, dim)
}

/// Probe matrices for one trace evaluation.
fn probes(n: usize, dim: usize, trace: TraceEstimator, rng: &mut StreamRng) -> Vec<Array2<f64>> {
    match trace {
        TraceEstimator::Hutchinson { probes } => (0..probes.max(1))
            .map(|_| {
                Array2::from_shape_fn((n, dim), |_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            })
            .collect(),
        TraceEstimator::Exact => (0..dim)
            .map(|k| {
                let mut e = Array2::zeros((n, dim));
                e.column_mut(k).fill(1.0);
                e
            })
            .collect(),
    }
}

/// Per-row estimates of `tr J` (probe mean for Hutchinson, basis sum for the
/// exact trace) and of `tr (I - J)^2` (as `|e - J e|^2`,
/// exact for the symmetric Jacobian of a posterior mean).
fn probe_sums(
    trace: TraceEstimator,
    probes: &[Array2<f64>],
    jvps: &[Array2<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let n = jvps[0].nrows();
    let mut tr = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for (p, j) in probes.iter().zip(jvps) {
        for i in 0..n {
            let (pr, jr) = (p.row(i), j.row(i));
            tr[i] += pr.dot(&jr);
            sq[i] += pr.iter().zip(jr).map(|(e, je)| (e - je).powi(2)).sum::<f64>();
        }
    }
    if let TraceEstimator::Hutchinson { .. } = trace {
        let k = probes.len() as f64;
        tr.iter_mut().chain(sq.iter_mut()).for_each(|t| *t /= k);
    }
    (tr, sq)
}

/// Per-row estimate of the denoiser Jacobian trace `tr J_D(x_i)` at `sigma`.
pub fn jacobian_trace<D: Denoise + ?Sized>(
    model: &D,
    x: ArrayView2<f64>,
    sigma: f64,
    trace: TraceEstimator,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dim(model.dim(), x.ncols())?;
    if x.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut rng = lane(seed, 0);
    let p = probes(x.nrows(), x.ncols(), trace, &mut rng);
    let views: Vec<ArrayView2<f64>> = p.iter().map(|m| m.view()).collect();
    let (_, jvps) = model.denoise_with_jvps(x, sigma, &views)?;
    Ok(probe_sums(trace, &p, &jvps).0)
}

/// Flow state of one chunk: positions, accumulated log-density change and a
/// validity flag per row.
struct Flow {
    x: Array2<f64>,
    log_p: Vec<f64>,
    valid: Vec<bool>,
}

impl Flow {
    fn new(x: Array2<f64>, log_p: Vec<f64>) -> Self {
        let valid = x.outer_iter().map(|r| r.iter().all(|v| v.is_finite())).collect();
        Self { x, log_p, valid }
    }

    /// One Euler step with the log-density increment. The step map is
    /// `I + c (I - J)` with `c = delta / sigma`; its log-determinant is taken
    /// to second order, `tr A - tr A^2 / 2`, which keeps log q consistent
    /// with the discrete samples. Invalid rows are evaluated at the origin
    /// and left untouched.
    fn step<D: Denoise + ?Sized>(
        &mut self,
        model: &D,
        sigma: f64,
        next: f64,
        trace: TraceEstimator,
        rng: &mut StreamRng,
    ) -> Result<()> {
        let (n, dim) = self.x.dim();
        let mut eval = self.x.clone();
        for (i, ok) in self.valid.iter().enumerate() {
            if !*ok {
                eval.row_mut(i).fill(0.0);
            }
        }
        let probe = probes(n, dim, trace, rng);
        let views: Vec<_> = probe.iter().map(|p| p.view()).collect();
        let (d, jvps) = model.denoise_with_jvps(eval.view(), sigma, &views)?;
        let (tr, sq) = probe_sums(trace, &probe, &jvps);
        let delta = next - sigma;
        let c = delta / sigma;
        for i in 0..n {
            if !self.valid[i] {
                continue;
            }
            let mut row = self.x.row_mut(i);
            row.zip_mut_with(&d.row(i), |x, d| *x += delta * (*x - d) / sigma);
            self.log_p[i] -= c * (dim as f64 - tr[i]) - 0.5 * c * c * sq[i];
            if !self.log_p[i].is_finite() || row.iter().any(|v| !v.is_finite()) {
                self.valid[i] = false;
            }
        }
        Ok(())
    }
}

/// PF-ODE samples with their model log-densities, integrated jointly from
/// `log N(x_T; 0, sigma_max^2 I)`. Rows whose trajectory turns non-finite come
/// back with a NaN log-density; if every row fails the call errors.
pub fn sample_ode_with_logq<D: Denoise + ?Sized>(
    model: &D,
    count: usize,
    schedule: &NoiseSchedule,
    trace: TraceEstimator,
    seed: u64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let sigmas = schedule.karras_sigmas()?;
    let dim = model.dim();
    let chunks: Vec<Result<(Array2<f64>, Vec<f64>)>> = chunk_sizes(count)
        .into_par_iter()
        .enumerate()
        .map(|(c, (lo, hi))| {
            let n = hi - lo;
            let mut rng = lane(seed, 2 * c as u64);
            let mut probe_rng = lane(seed, 2 * c as u64 + 1);
            let x = prior_chunk(n, dim, schedule.sigma_max, &mut rng);
            let log_p = x.outer_iter().map(|r| log_normal_prior(r, schedule.sigma_max)).collect();
            let mut flow = Flow::new(x, log_p);
            for w in sigmas.windows(2) {
                flow.step(model, w[0], w[1], trace, &mut probe_rng)?;
            }
            for (lp, ok) in flow.log_p.iter_mut().zip(&flow.valid) {
                if !ok {
                    *lp = f64::NAN;
                }
            }
            Ok((flow.x, flow.log_p))
        })
        .collect();
    let mut xs = Vec::new();
    let mut log_q = Vec::with_capacity(count);
    for c in chunks {
        let (x, l) = c?;
        xs.push(x);
        log_q.extend(l);
    }
    if count > 0 && log_q.iter().all(|l| l.is_nan()) {
        return Err(Error::NonFinite("every PF-ODE trajectory diverged".into()));
    }
    Ok((stack(xs, dim)?, log_q))
}

/// Model log-density of given samples: integrate the flow forward from
/// `sigma_min` to `sigma_max` and add the prior log-density at the end.
/// Non-finite trajectories yield `None` for that row only.
pub fn log_likelihood<D: Denoise + ?Sized>(
    model: &D,
    samples: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    trace: TraceEstimator,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    check_dim(model.dim(), samples.ncols())?;
    let mut up = schedule.karras_sigmas()?;
    up.pop();
    up.reverse();
    let count = samples.nrows();
    let chunks: Vec<Result<Vec<Option<f64>>>> = chunk_sizes(count)
        .into_par_iter()
        .enumerate()
        .map(|(c, (lo, hi))| {
            let mut rng = lane(seed, c as u64);
            let mut flow = Flow::new(samples.slice(s![lo..hi, ..]).to_owned(), vec![0.0; hi - lo]);
            for w in up.windows(2) {
                flow.step(model, w[0], w[1], trace, &mut rng)?;
            }
            Ok((0..hi - lo)
                .map(|i| {
                    let lp = log_normal_prior(flow.x.row(i), schedule.sigma_max) - flow.log_p[i];
                    (flow.valid[i] && lp.is_finite()).then_some(lp)
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
