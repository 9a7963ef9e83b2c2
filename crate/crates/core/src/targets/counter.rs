use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Running count of target evaluations.
///
/// `energy_calls` and `gradient_calls` count every energy and every gradient
/// evaluation. `density_calls` counts evaluation events: a joint
/// energy-and-gradient evaluation at one point is a single density call, as in
/// the usual "target density calls" budget where one autodiff pass yields both.
#[derive(Debug, Default)]
pub struct EvalCounter {
    energy: AtomicU64,
    gradient: AtomicU64,
    density: AtomicU64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record_energy(&self, n: u64) {
        self.energy.fetch_add(n, Ordering::Relaxed);
        self.density.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn record_gradient(&self, n: u64) {
        self.gradient.fetch_add(n, Ordering::Relaxed);
        self.density.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn record_joint(&self, n: u64) {
        self.energy.fetch_add(n, Ordering::Relaxed);
        self.gradient.fetch_add(n, Ordering::Relaxed);
        self.density.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            energy_calls: self.energy.load(Ordering::Relaxed),
            gradient_calls: self.gradient.load(Ordering::Relaxed),
            density_calls: self.density.load(Ordering::Relaxed),
        }
    }
}

/// Point-in-time copy of an [`EvalCounter`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub energy_calls: u64,
    pub gradient_calls: u64,
    pub density_calls: u64,
}

impl CounterSnapshot {
    /// Energy plus gradient evaluations, each counted as one call.
    pub fn total(&self) -> u64 {
        self.energy_calls + self.gradient_calls
    }

    /// Calls made since `earlier`.
    pub fn since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            energy_calls: self.energy_calls - earlier.energy_calls,
            gradient_calls: self.gradient_calls - earlier.gradient_calls,
            density_calls: self.density_calls - earlier.density_calls,
        }
    }

    pub fn add(&self, other: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            energy_calls: self.energy_calls + other.energy_calls,
            gradient_calls: self.gradient_calls + other.gradient_calls,
            density_calls: self.density_calls + other.density_calls,
        }
    }
}
