use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Denoise;
use crate::error::{check_dim, Error, Result};

/// Exact posterior mean for data `N(0, variance I)`:
/// `D(x, sigma) = x variance / (variance + sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianOracle {
    pub dim: usize,
    pub variance: f64,
}

impl GaussianOracle {
    pub fn new(dim: usize, variance: f64) -> Self {
        Self { dim, variance }
    }

    /// The Gaussian of per-coordinate scale `scale` tempered to `temperature`.
    pub fn tempered(dim: usize, scale: f64, temperature: f64) -> Self {
        Self { dim, variance: scale * scale * temperature }
    }

    pub fn shrinkage(&self, sigma: f64) -> f64 {
        self.variance / (self.variance + sigma * sigma)
    }

    /// `log N(x; 0, variance I)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ss: f64 = x.iter().map(|v| v * v).sum();
        -0.5 * ss / self.variance
            - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * self.variance).ln()
    }
}

impl Denoise for GaussianOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise_with_jvps(
        &self,
        x: ArrayView2<f64>,
        sigma: f64,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        check_dim(self.dim, x.ncols())?;
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("noise level must be positive, got {sigma}")));
        }
        let k = self.shrinkage(sigma);
        Ok((x.mapv(|v| k * v), tangents.iter().map(|t| t.mapv(|v| k * v)).collect()))
    }
}
