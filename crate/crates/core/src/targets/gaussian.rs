use super::Potential;

/// Isotropic Gaussian with energy `|x|^2 / (2 s^2)`.
#[derive(Debug, Clone)]
pub struct GaussianPotential {
    pub dim: usize,
    pub scale: f64,
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let s2 = self.scale * self.scale;
        x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2)
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let s2 = self.scale * self.scale;
        for (g, v) in grad.iter_mut().zip(x) {
            *g = v / s2;
        }
        self.energy(x)
    }
}
