use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{adam_step, Adam, Denoiser};
use crate::rng::StreamRng;

/// Denoising score-matching settings. Training noise levels are log-normal:
/// `ln sigma ~ N(log_sigma_mean, log_sigma_std^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_log_sigma_mean")]
    pub log_sigma_mean: f64,
    #[serde(default = "default_log_sigma_std")]
    pub log_sigma_std: f64,
    /// Shift the log-normal mean by `ln(sigma_data / 0.5)`, so data of any
    /// scale sees the noise-to-signal mix the defaults were tuned for at
    /// `sigma_data = 0.5`.
    #[serde(default)]
    pub relative_sigma: bool,
    /// Loss-trace window, in iterations.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

/// Data scale the default noise distribution was tuned for.
const REFERENCE_SIGMA_DATA: f64 = 0.5;

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_log_sigma_mean() -> f64 {
    -1.2
}
fn default_log_sigma_std() -> f64 {
    1.2
}
fn default_log_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 1000,
            learning_rate: default_learning_rate(),
            log_sigma_mean: default_log_sigma_mean(),
            log_sigma_std: default_log_sigma_std(),
            relative_sigma: false,
            log_every: default_log_every(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    /// Mean loss over each `log_every` window.
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
}

/// Runs `iterations` Adam steps of the weighted denoising loss on minibatches
/// drawn uniformly with replacement from `data`. The optimizer starts fresh.
pub fn train_dsm(
    model: &mut Denoiser,
    data: ArrayView2<f64>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if data.nrows() == 0 {
        return Err(Error::Empty("training data".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut opt = Adam::new(model.num_params(), config.learning_rate);
    let window = config.log_every.max(1);
    let mut trace = Vec::new();
    let (mut acc, mut seen) = (0.0, 0usize);
    let n = data.nrows();
    let dim = data.ncols();
    let log_sigma_mean = config.log_sigma_mean
        + if config.relative_sigma { (model.sigma_data() / REFERENCE_SIGMA_DATA).ln() } else { 0.0 };
    for _ in 0..config.iterations {
        let rows: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..n)).collect();
        let clean = data.select(Axis(0), &rows);
        let sigmas: Vec<f64> = (0..config.batch_size)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (log_sigma_mean + config.log_sigma_std * z).exp()
            })
            .collect();
        let noise = Array2::from_shape_fn((config.batch_size, dim), |_| rng.sample(StandardNormal));
        let (loss, grads) = model.loss_and_param_grads(clean.view(), &sigmas, noise.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss after {} steps", opt.step)));
        }
        adam_step(model, &grads, &mut opt)?;
        acc += loss;
        seen += 1;
        if seen == window {
            trace.push(acc / seen as f64);
            acc = 0.0;
            seen = 0;
        }
    }
    if seen > 0 {
        trace.push(acc / seen as f64);
    }
    let final_loss = trace.last().copied().unwrap_or(f64::NAN);
    Ok(TrainReport { iterations: config.iterations, loss_trace: trace, final_loss })
}
