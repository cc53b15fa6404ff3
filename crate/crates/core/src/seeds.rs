//! Seed derivation.
//!
//! A single user-facing seed fans out into independent sub-seeds for the
//! generator, the embedder initializers, the sampler, and the evaluator, so
//! changing one stage's consumption pattern never perturbs another stage.
//! Derivation is a splitmix64 finalizer over the (base, stream) pair, which
//! also makes per-item seeds (one per identity, one per query) cheap enough
//! to hand to parallel workers.

/// Well-known stream tags for the pipeline stages.
pub mod stream {
    pub const GENERATOR: u64 = 1;
    pub const VOICE_INIT: u64 = 2;
    pub const FACE_INIT: u64 = 3;
    pub const SAMPLER: u64 = 4;
    pub const EVALUATION: u64 = 5;
    pub const SPLIT: u64 = 6;
}

/// Derives a sub-seed from `base` for the given `stream`.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Derives a per-item seed (e.g. one per identity) within a stream.
pub fn derive_indexed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(derive(base, stream) ^ splitmix64(index.wrapping_add(1)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
