//! The progressive tempering sampler and the tempering-then-fit baseline.
//!
//! Levels are numbered from 1 (coldest, the deliverable) to `K` (hottest).
//! A run seeds buffers at levels `K` and `K - 1` with parallel tempering,
//! trains a model on each, and then for `k = K` down to 3 generates level
//! `k - 2` by guided sampling from the models at `k - 1` and `k`, reweights
//! and resamples, refines with short tempering runs, and trains.

mod config;
mod evaluation;
mod manifest;
mod trainer;

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::buffer::SampleBuffer;
use crate::diffusion::{sample_ode_with_logq, Denoise, TraceEstimator};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, GuidedDenoiser};
use crate::mcmc::{local_pt_refine, run_pt, PtOptions, PtSchedule};
use crate::resampling::{importance_resample, keep_finite, WeightedBatch};
use crate::rng::{derive_seed, stream};
use crate::targets::{EnergyTarget, TargetSpec};

pub use config::{
    apply_override, lookup, Ablation, BaselineConfig, EvalConfig, InitialPtConfig, LadderConfig,
    ModelConfig, RefineConfig, RunConfig,
};
pub use evaluation::{evaluate_model, evaluation_seed, reference_samples, ModelEvaluation};
pub use manifest::{Recorder, RunManifest, RunStatus, StageKind, StageRecord, MANIFEST_SCHEMA};
pub use trainer::{GaussianFitTrainer, ModelTrainer, NetworkTrainer, Persist, TemperedGaussianTrainer};

/// Trained models by level.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBank<M> {
    models: BTreeMap<usize, M>,
}

impl<M> Default for ModelBank<M> {
    fn default() -> Self {
        Self { models: BTreeMap::new() }
    }
}

impl<M> ModelBank<M> {
    pub fn get(&self, level: usize) -> Option<&M> {
        self.models.get(&level)
    }

    pub fn insert(&mut self, level: usize, model: M) {
        self.models.insert(level, model);
    }

    pub fn levels(&self) -> Vec<usize> {
        self.models.keys().copied().collect()
    }

    /// The coldest-level model, the output of a completed run.
    pub fn deliverable(&self) -> Option<&M> {
        self.get(1)
    }

    fn get_or_err(&self, level: usize) -> Result<&M> {
        self.get(level).ok_or_else(|| Error::Empty(format!("model at level {level}")))
    }
}

/// Receives intermediate results as a run progresses.
pub trait RunObserver {
    fn model(&mut self, _level: usize, _model: &dyn Persist) -> Result<()> {
        Ok(())
    }
    fn buffer(&mut self, _level: usize, _buffer: &SampleBuffer) -> Result<()> {
        Ok(())
    }
    fn manifest(&mut self, _manifest: &RunManifest) -> Result<()> {
        Ok(())
    }
}

/// Observer that discards everything.
pub struct Discard;

impl RunObserver for Discard {}

#[derive(Debug, Clone)]
pub struct PtsdOutput<M> {
    pub models: ModelBank<M>,
    /// Final buffer of every level.
    pub buffers: BTreeMap<usize, SampleBuffer>,
}

/// Label of a run in manifests and reports.
pub fn method_name(cfg: &RunConfig) -> String {
    match cfg.ablation {
        None => "ptsd".into(),
        Some(Ablation::NoGuidance) => "ptsd-no_guidance".into(),
        Some(Ablation::NoIs) => "ptsd-no_is".into(),
    }
}

pub fn new_manifest(cfg: &RunConfig, method: &str, overrides: &[String]) -> RunManifest {
    let mut m = RunManifest::new(method, cfg.target.to_string(), cfg.seed, cfg.to_value());
    m.overrides = overrides.to_vec();
    m
}

fn pt_details(run: &crate::mcmc::PtRun) -> Value {
    json!({
        "stats": run.stats,
        "rows": run.buffers.iter().map(SampleBuffer::len).collect::<Vec<_>>(),
    })
}

fn non_finite_rows(log_q: &[f64]) -> usize {
    log_q.iter().filter(|l| !l.is_finite()).count()
}

/// Runs the progressive sampler. Stage records are appended to `manifest` as
/// they complete, so a failed run still documents how far it got.
pub fn run_ptsd<T: ModelTrainer>(
    target: &EnergyTarget,
    cfg: &RunConfig,
    trainer: &T,
    manifest: &mut RunManifest,
    observer: &mut dyn RunObserver,
) -> Result<PtsdOutput<T::Model>> {
    cfg.validate()?;
    let ladder = cfg.ladder.build()?;
    let k_max = ladder.levels();
    let temp = |level: usize| ladder.level(level);
    manifest.temperatures = ladder.temperatures().to_vec();
    let mut rec = Recorder::new(manifest, target);
    let result = progressive(target, cfg, trainer, &mut rec, observer, k_max, &temp);
    rec.finish(result.as_ref().err());
    observer.manifest(rec.manifest)?;
    result
}

fn progressive<T: ModelTrainer>(
    target: &EnergyTarget,
    cfg: &RunConfig,
    trainer: &T,
    rec: &mut Recorder<'_>,
    observer: &mut dyn RunObserver,
    k_max: usize,
    temp: &dyn Fn(usize) -> f64,
) -> Result<PtsdOutput<T::Model>> {
    let seed = cfg.seed;
    let dim = target.dim();
    let mut buffers: BTreeMap<usize, SampleBuffer> = BTreeMap::new();
    let mut models = ModelBank::default();

    let (hot, cold) = (k_max, k_max - 1);
    let pt = &cfg.initial_pt;
    let temps = [temp(cold), temp(hot)];
    let init = rec.stage(StageKind::InitialPt, Some(cold), Some(temps[0]), || {
        let schedule = PtSchedule::scaled(pt.step_size, &temps, pt.swap_interval);
        let opts = PtOptions {
            chains: pt.chains,
            steps: pt.steps,
            burn_in: pt.burn_in,
            interval: pt.interval,
            init_scale: pt.init_scale,
        };
        let run = run_pt(target, &temps, &schedule, &opts, derive_seed(seed, "pt", 0))?;
        let details = pt_details(&run);
        Ok((run.buffers, details))
    })?;
    for (level, buffer) in [cold, hot].into_iter().zip(init) {
        if buffer.is_empty() {
            return Err(Error::Empty(format!("initial buffer at level {level}")));
        }
        observer.buffer(level, &buffer)?;
        buffers.insert(level, buffer);
    }
    observer.manifest(rec.manifest)?;

    for level in [cold, hot] {
        let mut model = trainer.init(dim, derive_seed(seed, "init", level as u64))?;
        let data = &buffers[&level];
        let train_seed = derive_seed(seed, "training", rec.manifest.stages.len() as u64);
        rec.stage(StageKind::Train, Some(level), Some(temp(level)), || {
            let d = trainer.train(&mut model, data, train_seed)?;
            Ok(((), d))
        })?;
        observer.model(level, &model)?;
        models.insert(level, model);
        observer.manifest(rec.manifest)?;
    }

    for k in (3..=k_max).rev() {
        let (target_level, mid) = (k - 2, k - 1);
        let t_target = temp(target_level);
        let step = (k_max - k) as u64;

        let (samples, log_q) = rec.stage(StageKind::GuidedSample, Some(target_level), Some(t_target), || {
            let trace = TraceEstimator::Hutchinson { probes: cfg.hutchinson_probes };
            let sample_seed = derive_seed(seed, "guidance-sampling", step);
            let cold_model = models.get_or_err(mid)?;
            let (x, lq, weight) = match cfg.ablation {
                Some(Ablation::NoGuidance) => {
                    let (x, lq) = sample_ode_with_logq(cold_model, cfg.buffer_size, &cfg.schedule, trace, sample_seed)?;
                    (x, lq, 0.0)
                }
                _ => {
                    let guidance = GuidanceConfig::new(temp(mid), temp(k), t_target)?;
                    let guided = GuidedDenoiser::new(cold_model, models.get_or_err(k)?, guidance)?;
                    let (x, lq) = sample_ode_with_logq(&guided, cfg.buffer_size, &cfg.schedule, trace, sample_seed)?;
                    (x, lq, guidance.weight())
                }
            };
            let details = json!({
                "rows": x.nrows(),
                "guidance_weight": weight,
                "non_finite_log_q": non_finite_rows(&lq),
                "models": [mid, k],
            });
            Ok(((x, lq), details))
        })?;

        let skip = cfg.ablation == Some(Ablation::NoIs) || cfg.skip_resampling.contains(&target_level);
        let mut fresh = rec.stage(StageKind::Resample, Some(target_level), Some(t_target), move || {
            if skip {
                let rows = log_q.len();
                let (buffer, dropped) = keep_finite(samples, &log_q, t_target)?;
                Ok((buffer, json!({ "skipped": true, "dropped": dropped, "rows": rows })))
            } else {
                let batch = WeightedBatch::evaluate(target, samples, log_q, t_target)?;
                let mut rng = stream(seed, "resample", step);
                let (buffer, report) = importance_resample(&batch, cfg.truncation, cfg.buffer_size, &mut rng)?;
                Ok((buffer, json!({ "skipped": false, "report": report })))
            }
        })?;

        let mut hot_buffer = buffers.remove(&mid).ok_or_else(|| Error::Empty(format!("buffer at level {mid}")))?;
        let refine = &cfg.refine;
        rec.stage(StageKind::Refine, Some(target_level), Some(t_target), || {
            let schedule = PtSchedule::scaled(refine.step_size, &[t_target, temp(mid)], refine.swap_interval);
            let stats = local_pt_refine(
                target,
                &mut fresh,
                &mut hot_buffer,
                refine.steps,
                &schedule,
                refine.mode,
                derive_seed(seed, "refine", step),
            )?;
            Ok(((), json!({ "stats": stats, "rows": [fresh.len(), hot_buffer.len()] })))
        })?;
        if fresh.is_empty() {
            return Err(Error::Empty(format!("buffer at level {target_level}")));
        }
        observer.buffer(target_level, &fresh)?;
        observer.buffer(mid, &hot_buffer)?;
        buffers.insert(target_level, fresh);
        buffers.insert(mid, hot_buffer);

        let clone = rec.stage(StageKind::Clone, Some(target_level), Some(t_target), || {
            Ok((models.get_or_err(mid)?.clone(), json!({ "from": mid })))
        })?;
        models.insert(target_level, clone);

        for level in [target_level, mid] {
            let mut model = models.get_or_err(level)?.clone();
            let data = &buffers[&level];
            let train_seed = derive_seed(seed, "training", rec.manifest.stages.len() as u64);
            rec.stage(StageKind::Train, Some(level), Some(temp(level)), || {
                let d = trainer.train(&mut model, data, train_seed)?;
                Ok(((), d))
            })?;
            observer.model(level, &model)?;
            models.insert(level, model);
        }
        observer.manifest(rec.manifest)?;
    }
    Ok(PtsdOutput { models, buffers })
}

#[derive(Debug, Clone)]
pub struct BaselineOutput<M> {
    pub model: M,
    /// Subsampled coldest chain the model was trained on.
    pub buffer: SampleBuffer,
}

/// Sweeps, burn-in and subsampling interval of the baseline's tempering run.
pub fn baseline_schedule(b: &BaselineConfig, buffer_size: usize) -> Result<(usize, usize, usize)> {
    let levels = b.ladder.levels as u64;
    let steps = match (b.budget, b.steps) {
        (Some(budget), _) => (budget / (levels * b.chains as u64)).saturating_sub(1) as usize,
        (None, Some(steps)) => steps,
        (None, None) => return Err(Error::InvalidConfig("baseline needs steps or budget".into())),
    };
    let burn_in = (steps as f64 * b.burn_in_fraction).floor() as usize;
    if steps <= burn_in {
        return Err(Error::InvalidConfig(format!("baseline budget leaves no sweeps after burn-in ({steps} steps)")));
    }
    let interval = ((steps - burn_in) * b.chains / buffer_size.max(1)).max(1);
    Ok((steps, burn_in, interval))
}

/// Full-ladder parallel tempering, then one model fitted to the coldest
/// chain.
pub fn run_ptdm_baseline<T: ModelTrainer>(
    target: &EnergyTarget,
    cfg: &RunConfig,
    trainer: &T,
    manifest: &mut RunManifest,
    observer: &mut dyn RunObserver,
) -> Result<BaselineOutput<T::Model>> {
    cfg.validate()?;
    let b = cfg
        .baseline
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no `baseline` section".into()))?;
    let ladder = b.ladder.build()?;
    let mut temps = ladder.temperatures().to_vec();
    temps.reverse();
    manifest.temperatures = ladder.temperatures().to_vec();
    let mut rec = Recorder::new(manifest, target);
    let result = (|| {
        let (steps, burn_in, interval) = baseline_schedule(b, cfg.buffer_size)?;
        let mut buffers = rec.stage(StageKind::LadderPt, Some(1), Some(temps[0]), || {
            let schedule = PtSchedule::scaled(b.step_size, &temps, b.swap_interval);
            let opts = PtOptions { chains: b.chains, steps, burn_in, interval, init_scale: cfg.initial_pt.init_scale };
            let run = run_pt(target, &temps, &schedule, &opts, derive_seed(cfg.seed, "pt", 0))?;
            let mut details = pt_details(&run);
            details["steps"] = json!(steps);
            details["burn_in"] = json!(burn_in);
            details["interval"] = json!(interval);
            Ok((run.buffers, details))
        })?;
        let buffer = buffers.swap_remove(0);
        if buffer.is_empty() {
            return Err(Error::Empty("baseline buffer".into()));
        }
        observer.buffer(1, &buffer)?;
        let mut model = trainer.init(target.dim(), derive_seed(cfg.seed, "init", 1))?;
        rec.stage(StageKind::Train, Some(1), Some(temps[0]), || {
            let d = trainer.train(&mut model, &buffer, derive_seed(cfg.seed, "training", 1))?;
            Ok(((), d))
        })?;
        observer.model(1, &model)?;
        Ok(BaselineOutput { model, buffer })
    })();
    rec.finish(result.as_ref().err());
    observer.manifest(rec.manifest)?;
    result
}

/// Expected stage sequence of a progressive run over `levels` temperatures.
pub fn expected_stages(levels: usize) -> Vec<StageKind> {
    let mut s = vec![StageKind::InitialPt, StageKind::Train, StageKind::Train];
    for _ in 3..=levels {
        s.extend([
            StageKind::GuidedSample,
            StageKind::Resample,
            StageKind::Refine,
            StageKind::Clone,
            StageKind::Train,
            StageKind::Train,
        ]);
    }
    s
}

/// A trained model of either family, for code that picks the family from a
/// config at run time.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Network(crate::network::Denoiser),
    Gaussian(crate::diffusion::GaussianOracle),
}

impl Denoise for TrainedModel {
    fn dim(&self) -> usize {
        match self {
            TrainedModel::Network(m) => m.dim(),
            TrainedModel::Gaussian(m) => m.dim(),
        }
    }

    fn denoise_with_jvps(
        &self,
        x: ndarray::ArrayView2<f64>,
        sigma: f64,
        tangents: &[ndarray::ArrayView2<f64>],
    ) -> Result<(ndarray::Array2<f64>, Vec<ndarray::Array2<f64>>)> {
        match self {
            TrainedModel::Network(m) => m.denoise_with_jvps(x, sigma, tangents),
            TrainedModel::Gaussian(m) => m.denoise_with_jvps(x, sigma, tangents),
        }
    }
}

impl Persist for TrainedModel {
    fn extension(&self) -> &'static str {
        match self {
            TrainedModel::Network(m) => m.extension(),
            TrainedModel::Gaussian(m) => m.extension(),
        }
    }

    fn save(&self, path: &std::path::Path) -> Result<()> {
        match self {
            TrainedModel::Network(m) => Persist::save(m, path),
            TrainedModel::Gaussian(m) => m.save(path),
        }
    }
}

/// Which pipeline to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ptsd,
    Ptdm,
}

/// Runs `method` with the model family named in the config and returns the
/// deliverable model. The manifest is complete whether or not the run
/// succeeds.
pub fn execute(
    target: &EnergyTarget,
    cfg: &RunConfig,
    method: Method,
    manifest: &mut RunManifest,
    observer: &mut dyn RunObserver,
) -> Result<TrainedModel> {
    match (&cfg.model, method) {
        (ModelConfig::Network { network }, Method::Ptsd) => {
            let trainer = NetworkTrainer { network: network.clone(), training: cfg.training.clone() };
            let out = run_ptsd(target, cfg, &trainer, manifest, observer)?;
            Ok(TrainedModel::Network(out.models.get_or_err(1)?.clone()))
        }
        (ModelConfig::Network { network }, Method::Ptdm) => {
            let mut training = cfg.training.clone();
            if let Some(iterations) = cfg.baseline.as_ref().and_then(|b| b.iterations) {
                training.iterations = iterations;
            }
            let trainer = NetworkTrainer { network: network.clone(), training };
            Ok(TrainedModel::Network(run_ptdm_baseline(target, cfg, &trainer, manifest, observer)?.model))
        }
        (ModelConfig::GaussianFit, Method::Ptsd) => {
            let out = run_ptsd(target, cfg, &GaussianFitTrainer, manifest, observer)?;
            Ok(TrainedModel::Gaussian(*out.models.get_or_err(1)?))
        }
        (ModelConfig::GaussianFit, Method::Ptdm) => {
            Ok(TrainedModel::Gaussian(run_ptdm_baseline(target, cfg, &GaussianFitTrainer, manifest, observer)?.model))
        }
        (ModelConfig::TemperedGaussian, method) => {
            let TargetSpec::Gaussian { scale, .. } = *target.spec() else {
                return Err(Error::InvalidConfig("the tempered_gaussian model needs a gaussian target".into()));
            };
            let trainer = TemperedGaussianTrainer { scale };
            let model = match method {
                Method::Ptsd => *run_ptsd(target, cfg, &trainer, manifest, observer)?.models.get_or_err(1)?,
                Method::Ptdm => run_ptdm_baseline(target, cfg, &trainer, manifest, observer)?.model,
            };
            Ok(TrainedModel::Gaussian(model))
        }
    }
}
