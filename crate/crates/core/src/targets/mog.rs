use super::Potential;

/// Equal-weight mixture of isotropic Gaussians.
#[derive(Debug, Clone)]
pub struct MixturePotential {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    dim: usize,
    log_norm: f64,
}

impl MixturePotential {
    pub fn new(means: Vec<Vec<f64>>, variance: f64) -> Self {
        let dim = means.first().map_or(0, Vec::len);
        let k = means.len() as f64;
        let log_norm =
            -k.ln() - 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * variance).ln();
        Self { means, variance, dim, log_norm }
    }

    fn component_log_densities(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for m in &self.means {
            let d2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(self.log_norm - 0.5 * d2 / self.variance);
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

impl Potential for MixturePotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let mut lp = Vec::with_capacity(self.means.len());
        self.component_log_densities(x, &mut lp);
        -log_sum_exp(&lp)
    }

    fn energy_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = Vec::with_capacity(self.means.len());
        self.component_log_densities(x, &mut lp);
        let lse = log_sum_exp(&lp);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (m, l) in self.means.iter().zip(&lp) {
            let r = (l - lse).exp();
            for ((g, a), b) in grad.iter_mut().zip(x).zip(m) {
                *g += r * (a - b) / self.variance;
            }
        }
        -lse
    }
}
