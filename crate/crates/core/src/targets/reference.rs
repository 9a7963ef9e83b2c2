use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{DoubleWellParams, EnergyTarget, TargetSpec};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Exact sampler for the 1D well density `exp(-(a x^4 + b x^2 + c x))`.
///
/// Rejection sampling from a Gaussian mixture envelope centred on the local
/// minima. The envelope bound is the grid maximum of the log-ratio on
/// `[-8, 8]` plus a 5% margin; outside that interval the quartic decay
/// dominates every envelope component.
#[derive(Debug, Clone)]
pub struct DoubleWellSampler {
    params: DoubleWellParams,
    centres: Vec<f64>,
    widths: Vec<f64>,
    log_weights: Vec<f64>,
    e_min: f64,
    log_bound: f64,
}

impl DoubleWellSampler {
    pub fn new(params: DoubleWellParams) -> Result<Self> {
        if !(params.quartic > 0.0) {
            return Err(Error::InvalidConfig("double well needs a positive quartic term".into()));
        }
        let step = 1e-3;
        let n = (16.0 / step) as usize;
        let grid: Vec<f64> = (0..=n).map(|i| -8.0 + i as f64 * step).collect();
        let energy: Vec<f64> = grid.iter().map(|&x| params.well_energy(x)).collect();
        let mut centres = Vec::new();
        for i in 1..n {
            if energy[i] <= energy[i - 1] && energy[i] < energy[i + 1] {
                centres.push(refine_minimum(&params, grid[i - 1], grid[i + 1]));
            }
        }
        if centres.is_empty() {
            return Err(Error::InvalidConfig("double well has no interior minimum".into()));
        }
        let widths: Vec<f64> = centres
            .iter()
            .map(|&m| 1.5 / params.well_curvature(m).max(1e-2).sqrt())
            .collect();
        let e_min = centres
            .iter()
            .map(|&m| params.well_energy(m))
            .fold(f64::INFINITY, f64::min);
        // Component weights follow the Laplace mass of each well.
        let raw: Vec<f64> = centres
            .iter()
            .zip(&widths)
            .map(|(&m, &s)| -(params.well_energy(m) - e_min) + s.ln())
            .collect();
        let norm = log_sum_exp(&raw);
        let log_weights = raw.iter().map(|w| w - norm).collect();
        let mut sampler =
            Self { params, centres, widths, log_weights, e_min, log_bound: 0.0 };
        let fine = 1e-4;
        let log_bound = (0..=(16.0 / fine) as usize)
            .map(|i| -8.0 + i as f64 * fine)
            .map(|x| sampler.log_target(x) - sampler.log_envelope(x))
            .fold(f64::NEG_INFINITY, f64::max);
        sampler.log_bound = log_bound + 1.05f64.ln();
        Ok(sampler)
    }

    fn log_target(&self, x: f64) -> f64 {
        -(self.params.well_energy(x) - self.e_min)
    }

    fn log_envelope(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .centres
            .iter()
            .zip(&self.widths)
            .zip(&self.log_weights)
            .map(|((&m, &s), &lw)| {
                let z = (x - m) / s;
                lw - 0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        let k = self.centres.len();
        loop {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = k - 1;
            for i in 0..k {
                acc += self.log_weights[i].exp();
                if u < acc {
                    comp = i;
                    break;
                }
            }
            let z: f64 = rng.sample(StandardNormal);
            let x = self.centres[comp] + self.widths[comp] * z;
            let log_ratio = self.log_target(x) - self.log_envelope(x) - self.log_bound;
            let v: f64 = rng.random();
            if v.ln() < log_ratio {
                return x;
            }
        }
    }
}

fn refine_minimum(p: &DoubleWellParams, mut lo: f64, mut hi: f64) -> f64 {
    // Bisection on the slope, which changes sign across a bracketed minimum.
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if p.well_slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

pub(super) fn sample(target: &EnergyTarget, count: usize, rng: &mut StreamRng) -> Result<Array2<f64>> {
    let d = target.dim();
    let mut out = Array2::zeros((count, d));
    match *target.spec() {
        TargetSpec::Gaussian { scale, .. } => {
            out.mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
        }
        TargetSpec::Mog40 => {
            let p = &target.params().mog40;
            let sd = p.variance.sqrt();
            for mut row in out.outer_iter_mut() {
                let k = rng.random_range(0..p.means.len());
                for (v, m) in row.iter_mut().zip(&p.means[k]) {
                    *v = m + sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        TargetSpec::Manywell { .. } => {
            let params = target.params().manywell;
            let well = DoubleWellSampler::new(params)?;
            let sd = (0.5 / params.harmonic).sqrt();
            for mut row in out.outer_iter_mut() {
                for b in 0..d / 2 {
                    row[2 * b] = well.sample(rng);
                    row[2 * b + 1] = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        TargetSpec::Lj { .. } => {
            return Err(Error::Unsupported(
                "no exact reference sampler for Lennard-Jones targets".into(),
            ))
        }
    }
    Ok(out)
}
