//! Temperature guidance: a first-order extrapolation in temperature of the
//! score (or, equivalently, the denoiser) from two trained temperatures to a
//! colder one, plus the naive score-rescaling baseline.
//!
//! With `w = (T1 - T) / (T2 - T1)` the guided score is
//! `(1 + w) s(T1) - w s(T2)`. Tweedie's formula is affine in the denoiser with
//! model-independent coefficients, so the same combination of denoiser outputs
//! yields exactly the guided score.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::diffusion::Denoise;
use crate::error::{check_dim, Error, Result};

/// Temperatures of a guidance step. The weight is derived on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuidanceConfig {
    t1: f64,
    t2: f64,
    target: f64,
}

impl GuidanceConfig {
    /// Extrapolation to a colder temperature: requires `target < t1 < t2`.
    pub fn new(t1: f64, t2: f64, target: f64) -> Result<Self> {
        let cfg = Self::general(t1, t2, target)?;
        if !(target < t1 && t1 < t2) {
            return Err(Error::InvalidConfig(format!(
                "guidance needs target < t1 < t2, got target={target}, t1={t1}, t2={t2}"
            )));
        }
        Ok(cfg)
    }

    /// Any positive temperatures with `t1 != t2`; covers interpolation and the
    /// degenerate endpoints `target == t1` and `target == t2`.
    pub fn general(t1: f64, t2: f64, target: f64) -> Result<Self> {
        if ![t1, t2, target].iter().all(|t| t.is_finite() && *t > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "guidance temperatures must be positive, got t1={t1}, t2={t2}, target={target}"
            )));
        }
        if t1 == t2 {
            return Err(Error::InvalidConfig(format!(
                "guidance finite difference is degenerate: t1 == t2 == {t1}"
            )));
        }
        Ok(Self { t1, t2, target })
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn weight(&self) -> f64 {
        (self.t1 - self.target) / (self.t2 - self.t1)
    }
}

fn combine(first: &[f64], second: &[f64], cfg: &GuidanceConfig) -> Result<Vec<f64>> {
    check_dim(first.len(), second.len())?;
    let w = cfg.weight();
    Ok(first.iter().zip(second).map(|(a, b)| (1.0 + w) * a - w * b).collect())
}

/// `(1 + w) score_t1 - w score_t2`.
pub fn guided_score(score_t1: &[f64], score_t2: &[f64], cfg: &GuidanceConfig) -> Result<Vec<f64>> {
    combine(score_t1, score_t2, cfg)
}

/// `(1 + w) D_t1 - w D_t2`.
pub fn guided_denoiser(
    denoised_t1: &[f64],
    denoised_t2: &[f64],
    cfg: &GuidanceConfig,
) -> Result<Vec<f64>> {
    combine(denoised_t1, denoised_t2, cfg)
}

/// `(t1 / target) score_t1`: anneal the score by the temperature ratio.
pub fn rescaled_score_baseline(score_t1: &[f64], t1: f64, target: f64) -> Result<Vec<f64>> {
    if !(target > 0.0) {
        return Err(Error::InvalidConfig(format!("target temperature must be positive, got {target}")));
    }
    let f = t1 / target;
    Ok(score_t1.iter().map(|s| f * s).collect())
}

/// Denoiser combination of two models trained at `t1` and `t2`. Directional
/// derivatives combine with the same weights, so log-densities along the
/// guided flow come for free.
#[derive(Debug, Clone)]
pub struct GuidedDenoiser<A, B> {
    pub cold: A,
    pub hot: B,
    pub config: GuidanceConfig,
}

impl<A: Denoise, B: Denoise> GuidedDenoiser<A, B> {
    pub fn new(cold: A, hot: B, config: GuidanceConfig) -> Result<Self> {
        check_dim(cold.dim(), hot.dim())?;
        Ok(Self { cold, hot, config })
    }
}

fn blend(a: &mut Array2<f64>, b: &Array2<f64>, w: f64) {
    a.zip_mut_with(b, |a, b| *a = (1.0 + w) * *a - w * b);
}

impl<A: Denoise, B: Denoise> Denoise for GuidedDenoiser<A, B> {
    fn dim(&self) -> usize {
        self.cold.dim()
    }

    fn denoise_with_jvps(
        &self,
        x: ArrayView2<f64>,
        sigma: f64,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let w = self.config.weight();
        let (mut d, mut jvps) = self.cold.denoise_with_jvps(x, sigma, tangents)?;
        let (d_hot, jvps_hot) = self.hot.denoise_with_jvps(x, sigma, tangents)?;
        blend(&mut d, &d_hot, w);
        for (j, h) in jvps.iter_mut().zip(&jvps_hot) {
            blend(j, h, w);
        }
        Ok((d, jvps))
    }
}

/// Denoiser whose Tweedie score is `factor` times the wrapped model's:
/// `D = x + factor (D_model - x)`. With `factor = t1 / target` this is the
/// score-rescaling baseline.
#[derive(Debug, Clone)]
pub struct RescaledDenoiser<A> {
    pub model: A,
    pub factor: f64,
}

impl<A: Denoise> Denoise for RescaledDenoiser<A> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn denoise_with_jvps(
        &self,
        x: ArrayView2<f64>,
        sigma: f64,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let f = self.factor;
        let (mut d, mut jvps) = self.model.denoise_with_jvps(x, sigma, tangents)?;
        d.zip_mut_with(&x, |d, x| *d = x + f * (*d - x));
        for (j, v) in jvps.iter_mut().zip(tangents) {
            j.zip_mut_with(v, |j, v| *j = v + f * (*j - v));
        }
        Ok((d, jvps))
    }
}
