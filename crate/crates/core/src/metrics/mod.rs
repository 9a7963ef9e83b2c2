//! Sample-quality metrics against reference samples: optimal-transport W2,
//! energy-histogram TVD, energy MMD, and quadratic-observable error.

mod hungarian;
mod kabsch;

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{log_likelihood, Denoise, NoiseSchedule, TraceEstimator};
use crate::error::{check_dim, Error, Result};
use crate::resampling::quantile;
use crate::targets::{CounterSnapshot, EnergyTarget};

pub use hungarian::min_cost_assignment;
pub use kabsch::aligned_squared_distance;

/// Largest sample count accepted by [`wasserstein2`] (cubic matching).
pub const MAX_W2_SAMPLES: usize = 2000;

/// Exact W2 between two equally sized point sets: the root mean squared
/// distance under the optimal one-to-one matching. With `particles`, each row
/// is a configuration of 3-D points and pair costs are taken after optimal
/// rigid alignment.
pub fn wasserstein2(x: ArrayView2<f64>, y: ArrayView2<f64>, particles: Option<usize>) -> Result<f64> {
    check_dim(x.ncols(), y.ncols())?;
    check_dim(x.nrows(), y.nrows())?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("W2 point sets".into()));
    }
    if n > MAX_W2_SAMPLES {
        return Err(Error::InvalidConfig(format!("W2 takes at most {MAX_W2_SAMPLES} points, got {n}")));
    }
    if let Some(p) = particles {
        check_dim(3 * p, x.ncols())?;
    }
    let cost: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = x.row(i).to_vec();
            (0..n).map(move |j| {
                let yj = y.row(j);
                match particles {
                    Some(p) => aligned_squared_distance(&xi, &yj.to_vec(), p),
                    None => xi.iter().zip(yj).map(|(a, b)| (a - b).powi(2)).sum(),
                }
            })
        })
        .collect();
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("W2 cost matrix".into()));
    }
    let assignment = min_cost_assignment(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).sqrt())
}

/// Shared binning of two energy samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyHistogram {
    pub edges: Vec<f64>,
    /// Normalized bin masses of the first and second sample.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl EnergyHistogram {
    /// `bins` uniform bins over the pooled range from the minimum to the
    /// 99.9% quantile; energies above the cap are clipped into the last bin.
    pub fn new(a: &[f64], b: &[f64], bins: usize) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::Empty("energy samples".into()));
        }
        if bins == 0 {
            return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
        }
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        if pooled.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("energies for the histogram".into()));
        }
        let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = quantile(&pooled, 0.999);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mass = |e: &[f64]| {
            let mut h = vec![0.0; bins];
            for v in e {
                let i = (((v - lo) / width).floor() as usize).min(bins - 1);
                h[i] += 1.0;
            }
            h.iter_mut().for_each(|c| *c /= e.len() as f64);
            h
        };
        Ok(Self { edges, p: mass(a), q: mass(b) })
    }

    pub fn tvd(&self) -> f64 {
        0.5 * self.p.iter().zip(&self.q).map(|(p, q)| (p - q).abs()).sum::<f64>()
    }

    /// Rows of `bin_left,bin_right,p_hat,q_hat`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "bin_left,bin_right,p_hat,q_hat")?;
        for i in 0..self.p.len() {
            writeln!(w, "{},{},{},{}", self.edges[i], self.edges[i + 1], self.p[i], self.q[i])?;
        }
        Ok(())
    }
}

/// Total variation distance between energy histograms.
pub fn energy_tvd(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    Ok(EnergyHistogram::new(a, b, bins)?.tvd())
}

/// Median of pairwise absolute differences of the pooled values.
pub fn median_bandwidth(pooled: &[f64]) -> f64 {
    let mut d: Vec<f64> = (0..pooled.len())
        .flat_map(|i| pooled[i + 1..].iter().map(move |b| (pooled[i] - b).abs()))
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 { *m } else { 1.0 }
}

/// Square root of the unbiased MMD^2 between scalar samples under the
/// Gaussian kernel `exp(-(a - b)^2 / (2 h^2))`; negative estimates clip to 0.
pub fn energy_mmd(a: &[f64], b: &[f64], bandwidth: f64) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Empty("MMD needs at least two values per sample".into()));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |x: f64, y: f64| (-(x - y).powi(2) * gamma).exp();
    let within = |s: &[f64]| {
        let n = s.len() as f64;
        let sum: f64 = (0..s.len())
            .into_par_iter()
            .map(|i| s[i + 1..].iter().map(|y| k(s[i], *y)).sum::<f64>())
            .sum();
        2.0 * sum / (n * (n - 1.0))
    };
    let cross: f64 = a.par_iter().map(|x| b.iter().map(|y| k(*x, *y)).sum::<f64>()).sum::<f64>()
        / (a.len() * b.len()) as f64;
    let mmd2 = within(a) + within(b) - 2.0 * cross;
    Ok(mmd2.max(0.0).sqrt())
}

/// Mean of `(x - a)^T C (x - a)` over rows.
pub fn mean_observable(x: ArrayView2<f64>, a: &[f64], c: ArrayView2<f64>) -> Result<f64> {
    check_dim(x.ncols(), a.len())?;
    check_dim(x.ncols(), c.nrows())?;
    check_dim(x.ncols(), c.ncols())?;
    if x.nrows() == 0 {
        return Err(Error::Empty("observable samples".into()));
    }
    let a = ndarray::ArrayView1::from(a);
    let total: f64 = x
        .outer_iter()
        .map(|row| {
            let r = &row - &a;
            r.dot(&c.dot(&r))
        })
        .sum();
    Ok(total / x.nrows() as f64)
}

/// `|mean_x O - mean_ref O|` for the quadratic observable.
pub fn observable_mae(x: ArrayView2<f64>, reference: ArrayView2<f64>, a: &[f64], c: ArrayView2<f64>) -> Result<f64> {
    Ok((mean_observable(x, a, c)? - mean_observable(reference, a, c)?).abs())
}

/// Subtracts each configuration's centroid from its particles.
pub fn centre_particles(x: ArrayView2<f64>, particles: usize) -> Result<Array2<f64>> {
    check_dim(3 * particles, x.ncols())?;
    let mut out = x.to_owned();
    for mut row in out.outer_iter_mut() {
        let mut m = [0.0; 3];
        for (i, v) in row.iter().enumerate() {
            m[i % 3] += v / particles as f64;
        }
        row.iter_mut().enumerate().for_each(|(i, v)| *v -= m[i % 3]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Points per set for W2 (at most [`MAX_W2_SAMPLES`]).
    pub w2_points: usize,
    pub bins: usize,
    /// Rigid alignment for particle targets.
    pub aligned: bool,
    /// Hutchinson probes for the reference log-likelihood.
    pub probes: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { w2_points: MAX_W2_SAMPLES, bins: 200, aligned: false, probes: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub w2: f64,
    pub w2_points: usize,
    pub w2_aligned: bool,
    pub tvd: f64,
    pub mmd: f64,
    pub mmd_bandwidth: f64,
    pub mmd_kernel: String,
    pub observable_mae: f64,
    /// Mean model log-density of the reference samples, when a model is given.
    pub mean_loglik: Option<f64>,
    pub samples: usize,
    pub reference: usize,
    /// Sample rows dropped for non-finite coordinates or energies.
    pub dropped: usize,
    pub bins: usize,
    /// Target evaluations made by the evaluation itself (never part of a
    /// run's budget).
    pub eval_calls: CounterSnapshot,
}

fn finite_rows(x: ArrayView2<f64>, energies: &[f64]) -> (Array2<f64>, Vec<f64>) {
    let keep: Vec<usize> = (0..x.nrows())
        .filter(|&i| energies[i].is_finite() && x.row(i).iter().all(|v| v.is_finite()))
        .collect();
    (x.select(Axis(0), &keep), keep.iter().map(|&i| energies[i]).collect())
}

/// All metrics of `samples` against `reference`. Energies are evaluated on a
/// private counter. With a model, also reports the mean model log-density of
/// the reference rows.
pub fn evaluate(
    samples: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    target: &EnergyTarget,
    model: Option<(&dyn DenoiseRef, &NoiseSchedule)>,
    opts: &EvalOptions,
) -> Result<(EvalReport, EnergyHistogram)> {
    check_dim(target.dim(), samples.ncols())?;
    check_dim(target.dim(), reference.ncols())?;
    let target = target.with_fresh_counter();
    let (x, ex) = finite_rows(samples, &target.energies(samples)?);
    let (r, er) = finite_rows(reference, &target.energies(reference)?);
    let dropped = samples.nrows() - x.nrows();
    let hist = EnergyHistogram::new(&ex, &er, opts.bins)?;
    let pooled: Vec<f64> = ex.iter().chain(&er).copied().collect();
    let bandwidth = median_bandwidth(&pooled);
    let mmd = energy_mmd(&ex, &er, bandwidth)?;
    let particles = if opts.aligned { target.spec().particle_layout().map(|(p, _)| p) } else { None };
    let n = x.nrows().min(r.nrows()).min(opts.w2_points).min(MAX_W2_SAMPLES);
    let w2 = wasserstein2(x.slice(ndarray::s![..n, ..]), r.slice(ndarray::s![..n, ..]), particles)?;
    let d = target.dim();
    let identity = Array2::eye(d);
    let origin = vec![0.0; d];
    let observable_mae = match target.spec().particle_layout() {
        Some((p, _)) => {
            observable_mae(centre_particles(x.view(), p)?.view(), centre_particles(r.view(), p)?.view(), &origin, identity.view())?
        }
        None => observable_mae(x.view(), r.view(), &origin, identity.view())?,
    };
    let mean_loglik = match model {
        Some((m, schedule)) => {
            let ll = m.log_likelihood(r.view(), schedule, TraceEstimator::Hutchinson { probes: opts.probes }, opts.seed)?;
            let valid: Vec<f64> = ll.into_iter().flatten().collect();
            (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64)
        }
        None => None,
    };
    let report = EvalReport {
        w2,
        w2_points: n,
        w2_aligned: particles.is_some(),
        tvd: hist.tvd(),
        mmd,
        mmd_bandwidth: bandwidth,
        mmd_kernel: "gaussian, median heuristic on pooled energies".into(),
        observable_mae,
        mean_loglik,
        samples: x.nrows(),
        reference: r.nrows(),
        dropped,
        bins: opts.bins,
        eval_calls: target.calls(),
    };
    Ok((report, hist))
}

/// Object-safe access to a model's log-likelihood.
pub trait DenoiseRef: Sync {
    fn log_likelihood(
        &self,
        samples: ArrayView2<f64>,
        schedule: &NoiseSchedule,
        trace: TraceEstimator,
        seed: u64,
    ) -> Result<Vec<Option<f64>>>;
}

impl<D: Denoise> DenoiseRef for D {
    fn log_likelihood(
        &self,
        samples: ArrayView2<f64>,
        schedule: &NoiseSchedule,
        trace: TraceEstimator,
        seed: u64,
    ) -> Result<Vec<Option<f64>>> {
        log_likelihood(self, samples, schedule, trace, seed)
    }
}
