//! Progressive tempering sampler with diffusion.
//!
//! Draws samples from unnormalized densities by running parallel tempering at
//! the two hottest temperatures of a ladder, fitting small denoisers there, and
//! stepping down the ladder with temperature-guided probability-flow sampling,
//! truncated importance resampling and short local tempering runs.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffer;
pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod io;
pub mod ladder;
pub mod metrics;
pub mod mcmc;
pub mod network;
pub mod pipeline;
pub mod resampling;
pub mod rng;
pub mod targets;

pub use buffer::{Provenance, RowCache, SampleBuffer};
pub use error::{Error, Result};
pub use network::{Denoiser, NetworkConfig};
pub use ladder::{geometric_ladder, LadderKind, TemperatureLadder};
pub use targets::{
    make_target, CounterSnapshot, EnergyTarget, EvalCounter, TargetSpec, TemperedTarget,
};
