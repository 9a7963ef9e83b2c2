//! Self-normalized, truncated importance resampling of generated samples
//! against a tempered target.

use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{Provenance, RowCache, SampleBuffer};
use crate::error::{check_dim, Error, Result};
use crate::targets::EnergyTarget;

/// Generated samples with their model log-densities and base energies.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    samples: Array2<f64>,
    log_q: Vec<f64>,
    energies: Vec<f64>,
    temperature: f64,
}

impl WeightedBatch {
    pub fn new(samples: Array2<f64>, log_q: Vec<f64>, energies: Vec<f64>, temperature: f64) -> Result<Self> {
        check_dim(samples.nrows(), log_q.len())?;
        check_dim(samples.nrows(), energies.len())?;
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { samples, log_q, energies, temperature })
    }

    /// Evaluates base energies of every row: one energy call per row.
    pub fn evaluate(target: &EnergyTarget, samples: Array2<f64>, log_q: Vec<f64>, temperature: f64) -> Result<Self> {
        let energies = target.energies(samples.view())?;
        Self::new(samples, log_q, energies, temperature)
    }

    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn log_q(&self) -> &[f64] {
        &self.log_q
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Unnormalized target log-density `-E / T` of every row.
    pub fn log_target(&self) -> Vec<f64> {
        self.energies.iter().map(|e| -e / self.temperature).collect()
    }

    /// Buffer of the rows `sources` (repeats allowed), carrying their energies.
    fn gather(&self, sources: &[usize]) -> Result<SampleBuffer> {
        let samples = self.samples.select(Axis(0), sources);
        let provenance = sources.iter().map(|&source| Provenance::Resampled { source }).collect();
        let cache = sources
            .iter()
            .map(|&s| RowCache { energy: Some(self.energies[s]), gradient: None })
            .collect();
        SampleBuffer::with_cache(self.temperature, samples, provenance, cache)
    }
}

/// Normalized weights over the rows that survived validity filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    /// Batch row of each weight.
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
    /// Rows dropped for a non-finite log-density or energy.
    pub dropped: usize,
}

/// `w_n ∝ exp(log_target_n - log_q_n)` over rows where both are finite,
/// computed with max subtraction.
pub fn normalized_weights(log_target: &[f64], log_q: &[f64]) -> Result<ImportanceWeights> {
    check_dim(log_target.len(), log_q.len())?;
    let (rows, log_w): (Vec<usize>, Vec<f64>) = log_target
        .iter()
        .zip(log_q)
        .enumerate()
        .map(|(i, (p, q))| (i, p - q))
        .filter(|(_, lw)| lw.is_finite())
        .unzip();
    if rows.is_empty() {
        return Err(Error::NonFinite(format!("importance weights of all {} rows", log_q.len())));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(ImportanceWeights { dropped: log_q.len() - rows.len(), rows, weights })
}

/// Quantile with linear interpolation between order statistics (the
/// `(n - 1) q` rank convention).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, frac) = (rank.floor() as usize, rank.fract());
    match sorted.get(lo + 1) {
        Some(hi) => sorted[lo] + frac * (hi - sorted[lo]),
        None => sorted[lo],
    }
}

/// Weights capped at their `tau`-quantile and renormalized; returns the cap.
/// A zero quantile leaves the weights as they are and reports the largest.
pub fn truncate_weights(weights: &[f64], tau: f64) -> Result<(Vec<f64>, f64)> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidConfig(format!("truncation quantile must be in (0, 1], got {tau}")));
    }
    if weights.is_empty() {
        return Err(Error::Empty("importance weights".into()));
    }
    let cap = quantile(weights, tau);
    if cap <= 0.0 {
        // Most weights underflowed to zero; capping would erase the rest.
        let max = weights.iter().copied().fold(0.0, f64::max);
        return Ok((weights.to_vec(), max));
    }
    let mut capped: Vec<f64> = weights.iter().map(|w| w.min(cap)).collect();
    let total: f64 = capped.iter().sum();
    capped.iter_mut().for_each(|w| *w /= total);
    Ok((capped, cap))
}

/// `1 / sum w^2` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// `count` categorical draws with replacement; provenance records the batch
/// row of every draw.
pub fn resample<R: Rng + ?Sized>(
    batch: &WeightedBatch,
    weights: &ImportanceWeights,
    count: usize,
    rng: &mut R,
) -> Result<SampleBuffer> {
    check_dim(weights.rows.len(), weights.weights.len())?;
    let dist = WeightedIndex::new(&weights.weights)
        .map_err(|e| Error::InvalidConfig(format!("resampling weights: {e}")))?;
    let sources: Vec<usize> = (0..count).map(|_| weights.rows[dist.sample(rng)]).collect();
    batch.gather(&sources)
}

/// What one weighting-and-resampling pass did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub batch: usize,
    pub dropped: usize,
    pub ess: f64,
    pub ess_truncated: f64,
    pub cap: f64,
    /// Distinct batch rows among the draws.
    pub unique: usize,
}

/// Weights the batch, truncates at `tau`, and draws `count` rows.
pub fn importance_resample<R: Rng + ?Sized>(
    batch: &WeightedBatch,
    tau: f64,
    count: usize,
    rng: &mut R,
) -> Result<(SampleBuffer, ResampleReport)> {
    let raw = normalized_weights(&batch.log_target(), batch.log_q())?;
    let (truncated, cap) = truncate_weights(&raw.weights, tau)?;
    let ess = effective_sample_size(&raw.weights);
    let ess_truncated = effective_sample_size(&truncated);
    let dropped = raw.dropped;
    let weights = ImportanceWeights { weights: truncated, ..raw };
    let out = resample(batch, &weights, count, rng)?;
    let mut seen: Vec<usize> = out
        .provenance()
        .iter()
        .filter_map(|p| match p {
            Provenance::Resampled { source } => Some(*source),
            _ => None,
        })
        .collect();
    seen.sort_unstable();
    seen.dedup();
    let report = ResampleReport {
        batch: batch.len(),
        dropped,
        ess,
        ess_truncated,
        cap,
        unique: seen.len(),
    };
    Ok((out, report))
}

/// Rows with a finite log-density, unweighted and without cached energies.
/// Used when resampling is switched off for a step; returns the number of
/// rows dropped.
pub fn keep_finite(samples: Array2<f64>, log_q: &[f64], temperature: f64) -> Result<(SampleBuffer, usize)> {
    check_dim(samples.nrows(), log_q.len())?;
    let rows: Vec<usize> = (0..log_q.len()).filter(|&i| log_q[i].is_finite()).collect();
    if rows.is_empty() {
        return Err(Error::NonFinite(format!("log-densities of all {} generated rows", log_q.len())));
    }
    let provenance = rows.iter().map(|&row| Provenance::Generated { row }).collect();
    let kept = SampleBuffer::new(temperature, samples.select(Axis(0), &rows), provenance)?;
    Ok((kept, log_q.len() - rows.len()))
}
