use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{check_dim, Error, Result};

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim(self.first.len(), params.len())?;
        check_dim(params.len(), grads.len())?;
        self.step += 1;
        let t = self.step as i32;
        let lr = self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let eps_hat = self.epsilon * (1.0 - self.beta2.powi(t)).sqrt();
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in
            params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps_hat);
        }
        Ok(())
    }
}

/// Applies one Adam update to a denoiser; fails if a parameter turns
/// non-finite.
pub fn adam_step(model: &mut Denoiser, grads: &[f64], opt: &mut Adam) -> Result<()> {
    opt.update(model.params_mut(), grads)?;
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("parameters after optimizer step {}", opt.step)));
    }
    Ok(())
}
