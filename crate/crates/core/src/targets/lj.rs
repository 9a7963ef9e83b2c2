use super::Potential;
use serde::{Deserialize, Serialize};

/// Physical constants and smoothing of the Lennard-Jones cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LennardJonesParams {
    pub epsilon: f64,
    pub sigma: f64,
    /// Below `cutoff_ratio * sigma` the pair energy is continued smoothly.
    pub cutoff_ratio: f64,
    /// Strength of the harmonic restraint `0.5 * k * sum |x_i - com|^2`.
    pub oscillator_scale: f64,
    pub spatial_dim: usize,
}

/// Sum of pairwise Lennard-Jones energies with a bounded core.
///
/// For `r < r_c` the pair energy is the cubic Hermite interpolant on `[0, r_c]`
/// that matches `V(r_c)` and `V'(r_c)` at the junction and has zero slope at the
/// origin, with `V(0) = V(r_c) - r_c V'(r_c) / 2`. Those end conditions make the
/// cubic coefficient vanish, so the continuation is
/// `V(0) + V'(r_c) r^2 / (2 r_c)`: monotone, bounded and smooth in the
/// coordinates, and C1 at the junction.
#[derive(Debug, Clone)]
pub struct LennardJonesPotential {
    pub particles: usize,
    pub params: LennardJonesParams,
    r_cut: f64,
    v_cut: f64,
    dv_cut: f64,
}

impl LennardJonesPotential {
    pub fn new(particles: usize, params: LennardJonesParams) -> Self {
        let r_cut = params.cutoff_ratio * params.sigma;
        let mut lj = Self { particles, params, r_cut, v_cut: 0.0, dv_cut: 0.0 };
        lj.v_cut = lj.raw_pair(r_cut);
        lj.dv_cut = lj.raw_pair_slope(r_cut);
        lj
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.r_cut
    }

    fn raw_pair(&self, r: f64) -> f64 {
        let sr6 = (self.params.sigma / r).powi(6);
        4.0 * self.params.epsilon * (sr6 * sr6 - sr6)
    }

    fn raw_pair_slope(&self, r: f64) -> f64 {
        let sr6 = (self.params.sigma / r).powi(6);
        4.0 * self.params.epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r
    }

    /// Smoothed pair energy `V(r)`.
    pub fn pair_energy(&self, r: f64) -> f64 {
        if r >= self.r_cut {
            self.raw_pair(r)
        } else {
            let v0 = self.v_cut - 0.5 * self.r_cut * self.dv_cut;
            v0 + self.dv_cut * r * r / (2.0 * self.r_cut)
        }
    }

    /// `V'(r) / r`, finite at `r = 0`.
    fn pair_slope_over_r(&self, r2: f64) -> f64 {
        let r = r2.sqrt();
        if r >= self.r_cut {
            self.raw_pair_slope(r) / r
        } else {
            self.dv_cut / self.r_cut
        }
    }

    /// Smoothed pair slope `V'(r)`.
    pub fn pair_slope(&self, r: f64) -> f64 {
        self.pair_slope_over_r(r * r) * r
    }
}

impl Potential for LennardJonesPotential {
    fn dim(&self) -> usize {
        self.particles * self.params.spatial_dim
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let sd = self.params.spatial_dim;
        let n = self.particles;
        let mut e = 0.0;
        for i in 0..n {
            let xi = &x[i * sd..(i + 1) * sd];
            for j in (i + 1)..n {
                let xj = &x[j * sd..(j + 1) * sd];
                let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                e += self.pair_energy(r2.sqrt());
            }
        }
        if self.params.oscillator_scale != 0.0 {
            let com = centre_of_mass(x, n, sd);
            let spread: f64 = x
                .chunks_exact(sd)
                .flat_map(|p| p.iter().zip(&com).map(|(a, c)| (a - c) * (a - c)))
                .sum();
            e += 0.5 * self.params.oscillator_scale * spread;
        }
        e
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let sd = self.params.spatial_dim;
        let n = self.particles;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut diff = vec![0.0; sd];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut r2 = 0.0;
                for k in 0..sd {
                    diff[k] = x[i * sd + k] - x[j * sd + k];
                    r2 += diff[k] * diff[k];
                }
                let s = self.pair_slope_over_r(r2);
                for k in 0..sd {
                    grad[i * sd + k] += s * diff[k];
                    grad[j * sd + k] -= s * diff[k];
                }
            }
        }
        if self.params.oscillator_scale != 0.0 {
            // d/dx_i of 0.5 k sum |x_j - com|^2 is k (x_i - com): the com terms cancel.
            let com = centre_of_mass(x, n, sd);
            for (g, p) in grad.chunks_exact_mut(sd).zip(x.chunks_exact(sd)) {
                for k in 0..sd {
                    g[k] += self.params.oscillator_scale * (p[k] - com[k]);
                }
            }
        }
        self.energy(x)
    }
}

pub(crate) fn centre_of_mass(x: &[f64], n: usize, sd: usize) -> Vec<f64> {
    let mut com = vec![0.0; sd];
    for p in x.chunks_exact(sd) {
        for k in 0..sd {
            com[k] += p[k];
        }
    }
    com.iter_mut().for_each(|c| *c /= n as f64);
    com
}
