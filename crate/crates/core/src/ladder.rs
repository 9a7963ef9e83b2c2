//! Temperature ladders.
//!
//! Levels are numbered `1..=K` from coldest to hottest, so `T_1 = T_min` and
//! `T_K = T_max`. [`TemperatureLadder::temperatures`] lists them hottest first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LadderKind {
    #[default]
    Geometric,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureLadder {
    /// Strictly decreasing: `[T_K, ..., T_1]`.
    temperatures: Vec<f64>,
}

impl TemperatureLadder {
    pub fn new(kind: LadderKind, t_min: f64, t_max: f64, levels: usize) -> Result<Self> {
        match kind {
            LadderKind::Geometric => geometric_ladder(t_min, t_max, levels),
            LadderKind::Linear => linear_ladder(t_min, t_max, levels),
        }
    }

    /// Builds a ladder from explicit temperatures, which must be positive and
    /// strictly decreasing.
    pub fn from_temperatures(temperatures: Vec<f64>) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(Error::InvalidConfig("empty temperature ladder".into()));
        }
        if temperatures.iter().any(|t| !(*t > 0.0) || !t.is_finite())
            || temperatures.windows(2).any(|w| w[0] <= w[1])
        {
            return Err(Error::InvalidConfig(format!(
                "temperatures must be positive and strictly decreasing: {temperatures:?}"
            )));
        }
        Ok(Self { temperatures })
    }

    pub fn levels(&self) -> usize {
        self.temperatures.len()
    }

    /// Temperature of level `k` in `1..=K`.
    pub fn level(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.levels(), "level {k} outside 1..={}", self.levels());
        self.temperatures[self.levels() - k]
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn hottest(&self) -> f64 {
        self.temperatures[0]
    }

    pub fn coldest(&self) -> f64 {
        *self.temperatures.last().expect("non-empty")
    }
}

fn check_bounds(t_min: f64, t_max: f64, levels: usize) -> Result<()> {
    if !(t_min > 0.0) || !(t_max > t_min) || !t_max.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "ladder needs 0 < t_min < t_max, got [{t_min}, {t_max}]"
        )));
    }
    if levels < 2 {
        return Err(Error::InvalidConfig(format!("ladder needs at least 2 levels, got {levels}")));
    }
    Ok(())
}

/// `T_k = T_min (T_max / T_min)^((k-1)/(K-1))`, endpoints exact.
pub fn geometric_ladder(t_min: f64, t_max: f64, levels: usize) -> Result<TemperatureLadder> {
    check_bounds(t_min, t_max, levels)?;
    let ratio = t_max / t_min;
    let temperatures = (1..=levels)
        .rev()
        .map(|k| match k {
            1 => t_min,
            k if k == levels => t_max,
            k => t_min * ratio.powf((k - 1) as f64 / (levels - 1) as f64),
        })
        .collect();
    TemperatureLadder::from_temperatures(temperatures)
}

pub fn linear_ladder(t_min: f64, t_max: f64, levels: usize) -> Result<TemperatureLadder> {
    check_bounds(t_min, t_max, levels)?;
    let temperatures = (1..=levels)
        .rev()
        .map(|k| match k {
            1 => t_min,
            k if k == levels => t_max,
            k => t_min + (t_max - t_min) * (k - 1) as f64 / (levels - 1) as f64,
        })
        .collect();
    TemperatureLadder::from_temperatures(temperatures)
}
