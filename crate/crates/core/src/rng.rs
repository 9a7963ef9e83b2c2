//! Deterministic random streams.
//!
//! Every random draw in a run descends from one master seed. Named sub-streams
//! (`pt`, `training`, ...) are derived by hashing the name into the seed, and
//! per-chain or per-chunk streams use the ChaCha stream counter so results do
//! not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Sub-stream names used by the pipeline.
pub mod streams {
    pub const PT: &str = "pt";
    pub const TRAINING: &str = "training";
    pub const GUIDANCE: &str = "guidance-sampling";
    pub const HUTCHINSON: &str = "hutchinson";
    pub const RESAMPLE: &str = "resample";
    pub const REFINE: &str = "refine";
    pub const INIT: &str = "init";
    pub const EVAL: &str = "eval";
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the named sub-stream of `master`, further keyed by `index`
/// (stage number, model index, ...).
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    splitmix(splitmix(master ^ fnv1a(name.as_bytes())) ^ splitmix(index.wrapping_add(1)))
}

pub fn stream(master: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, name, index))
}

/// Independent stream `lane` of a seed, used for per-chain / per-chunk work.
pub fn lane(seed: u64, lane: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(seed);
    rng.set_stream(lane);
    rng
}
