use ndarray::Array2;

use super::RunConfig;
use crate::diffusion::{sample_ode, Denoise};
use crate::error::Result;
use crate::io::read_samples;
use crate::metrics::{evaluate, EnergyHistogram, EvalOptions, EvalReport};
use crate::rng::{derive_seed, stream};
use crate::targets::EnergyTarget;

/// Samples drawn from a trained model, the reference they were compared
/// against, and the resulting metrics.
#[derive(Debug, Clone)]
pub struct ModelEvaluation {
    pub report: EvalReport,
    pub histogram: EnergyHistogram,
    pub samples: Array2<f64>,
    pub reference: Array2<f64>,
}

/// Seed of all evaluation streams of a run.
pub fn evaluation_seed(cfg: &RunConfig) -> u64 {
    cfg.evaluation.seed.unwrap_or_else(|| derive_seed(cfg.seed, "eval", 0))
}

/// Reference samples for a run: the configured file if any, otherwise exact
/// draws from the target.
pub fn reference_samples(target: &EnergyTarget, cfg: &RunConfig) -> Result<Array2<f64>> {
    match &cfg.evaluation.reference_file {
        Some(path) => read_samples(path),
        None => {
            let mut rng = stream(evaluation_seed(cfg), "eval-reference", 0);
            target.reference_sample(cfg.evaluation.reference, &mut rng)
        }
    }
}

/// Draws `evaluation.samples` rows from `model` with the run's noise schedule
/// and scores them. Target evaluations go to a private counter.
pub fn evaluate_model<D: Denoise>(target: &EnergyTarget, cfg: &RunConfig, model: &D) -> Result<ModelEvaluation> {
    let seed = evaluation_seed(cfg);
    let reference = reference_samples(target, cfg)?;
    let samples = sample_ode(model, cfg.evaluation.samples, &cfg.schedule, derive_seed(seed, "eval-sampling", 0))?;
    let opts = EvalOptions {
        w2_points: cfg.evaluation.samples.min(cfg.evaluation.reference),
        bins: cfg.evaluation.bins,
        aligned: cfg.evaluation.aligned,
        probes: cfg.hutchinson_probes,
        seed: derive_seed(seed, "hutchinson", 0),
    };
    let (report, histogram) = evaluate(samples.view(), reference.view(), target, Some((model, &cfg.schedule)), &opts)?;
    Ok(ModelEvaluation { report, histogram, samples, reference })
}
