//! Named random streams derived from a single master seed.
//!
//! Every random quantity in a run comes from `stream(master, name, index)`.
//! The stream id is a stable hash of `(name, index)`, so results do not
//! depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const MODEL: &str = "model";
pub const INSTANCE: &str = "instance";
pub const TRAIN: &str = "train";
pub const EVAL: &str = "eval";
pub const SELECT: &str = "select";
pub const EXPORT: &str = "export";
pub const GRAPH: &str = "graph";
/// Per-ratio sub-master of a pipeline run.
pub const PIPELINE: &str = "pipeline";

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives a child seed from `(master, name, index)`.
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    mix64(mix64(master ^ fnv1a(name)) ^ mix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn stream(master: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, name, index))
}

pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Uniform draw in `[0, 1)` that is a pure function of `(key, counter)`.
pub fn unit_hash(key: u64, counter: u64) -> f64 {
    let bits = mix64(key ^ mix64(counter));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
