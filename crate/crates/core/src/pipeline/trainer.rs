use std::path::Path;

use serde_json::{json, Value};

use crate::buffer::SampleBuffer;
use crate::diffusion::{train_dsm, Denoise, GaussianOracle, TrainConfig};
use crate::error::{Error, Result};
use crate::network::{Denoiser, NetworkConfig};

/// Creates and fits the per-level models of a run.
pub trait ModelTrainer {
    type Model: Denoise + Clone + Persist;

    /// Untrained model of input dimension `dim`.
    fn init(&self, dim: usize, seed: u64) -> Result<Self::Model>;

    /// Fits `model` to `data`, continuing from its current state. Returns
    /// diagnostics for the manifest.
    fn train(&self, model: &mut Self::Model, data: &SampleBuffer, seed: u64) -> Result<Value>;
}

/// Models that can be written to disk.
pub trait Persist {
    /// File extension of the saved form.
    fn extension(&self) -> &'static str;
    fn save(&self, path: &Path) -> Result<()>;
}

impl Persist for Denoiser {
    fn extension(&self) -> &'static str {
        "ckpt"
    }

    fn save(&self, path: &Path) -> Result<()> {
        Denoiser::save(self, path)
    }
}

impl Persist for GaussianOracle {
    fn extension(&self) -> &'static str {
        "json"
    }

    fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// MLP denoisers trained by denoising score matching. Every training stage
/// sets `sigma_data` to the pooled standard deviation of its buffer.
#[derive(Debug, Clone)]
pub struct NetworkTrainer {
    pub network: NetworkConfig,
    pub training: TrainConfig,
}

impl ModelTrainer for NetworkTrainer {
    type Model = Denoiser;

    fn init(&self, dim: usize, seed: u64) -> Result<Denoiser> {
        Denoiser::new(dim, &self.network, 1.0, seed)
    }

    fn train(&self, model: &mut Denoiser, data: &SampleBuffer, seed: u64) -> Result<Value> {
        let sigma_data = data.pooled_std();
        model.set_sigma_data(sigma_data)?;
        let report = train_dsm(model, data.samples(), &self.training, seed)?;
        Ok(json!({
            "rows": data.len(),
            "sigma_data": sigma_data,
            "iterations": report.iterations,
            "final_loss": report.final_loss,
            "loss_trace": report.loss_trace,
        }))
    }
}

/// Closed-form denoiser of `N(0, v I)` with `v` the mean squared coordinate
/// of the buffer. Stands in for a trained network on Gaussian targets, where
/// it is the exact optimum of the training objective family.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianFitTrainer;

impl ModelTrainer for GaussianFitTrainer {
    type Model = GaussianOracle;

    fn init(&self, dim: usize, _seed: u64) -> Result<GaussianOracle> {
        Ok(GaussianOracle::new(dim, 1.0))
    }

    fn train(&self, model: &mut GaussianOracle, data: &SampleBuffer, _seed: u64) -> Result<Value> {
        if data.is_empty() {
            return Err(Error::Empty("training buffer".into()));
        }
        let x = data.samples();
        model.variance = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        Ok(json!({ "rows": data.len(), "variance": model.variance }))
    }
}

/// Exact denoiser of the tempered target `N(0, scale^2 T I)` at the buffer's
/// temperature; ignores the buffer contents.
#[derive(Debug, Clone, Copy)]
pub struct TemperedGaussianTrainer {
    pub scale: f64,
}

impl ModelTrainer for TemperedGaussianTrainer {
    type Model = GaussianOracle;

    fn init(&self, dim: usize, _seed: u64) -> Result<GaussianOracle> {
        Ok(GaussianOracle::new(dim, self.scale * self.scale))
    }

    fn train(&self, model: &mut GaussianOracle, data: &SampleBuffer, _seed: u64) -> Result<Value> {
        *model = GaussianOracle::tempered(model.dim, self.scale, data.temperature());
        Ok(json!({ "rows": data.len(), "variance": model.variance }))
    }
}
