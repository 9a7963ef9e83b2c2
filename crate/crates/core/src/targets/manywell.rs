use super::Potential;
use serde::{Deserialize, Serialize};

/// Coefficients of the double-well block
/// `E(x1, x2) = quartic*x1^4 + quadratic*x1^2 + linear*x1 + harmonic*x2^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleWellParams {
    pub quartic: f64,
    pub quadratic: f64,
    pub linear: f64,
    pub harmonic: f64,
}

impl DoubleWellParams {
    pub fn well_energy(&self, x1: f64) -> f64 {
        let x2 = x1 * x1;
        self.quartic * x2 * x2 + self.quadratic * x2 + self.linear * x1
    }

    pub fn well_slope(&self, x1: f64) -> f64 {
        4.0 * self.quartic * x1 * x1 * x1 + 2.0 * self.quadratic * x1 + self.linear
    }

    pub fn well_curvature(&self, x1: f64) -> f64 {
        12.0 * self.quartic * x1 * x1 + 2.0 * self.quadratic
    }
}

/// Product of `blocks` independent double wells, dimension `2 * blocks`.
/// Block `i` occupies coordinates `(2i, 2i + 1)`.
#[derive(Debug, Clone)]
pub struct ManyWellPotential {
    pub blocks: usize,
    pub params: DoubleWellParams,
}

impl Potential for ManyWellPotential {
    fn dim(&self) -> usize {
        2 * self.blocks
    }

    fn energy(&self, x: &[f64]) -> f64 {
        x.chunks_exact(2)
            .map(|b| self.params.well_energy(b[0]) + self.params.harmonic * b[1] * b[1])
            .sum()
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, b) in grad.chunks_exact_mut(2).zip(x.chunks_exact(2)) {
            g[0] = self.params.well_slope(b[0]);
            g[1] = 2.0 * self.params.harmonic * b[1];
        }
        self.energy(x)
    }
}
