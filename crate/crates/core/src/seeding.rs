//! Deterministic seed derivation.
//!
//! Every pipeline stage gets its own RNG stream derived from one master seed, so
//! inserting or removing a stage never shifts the randomness consumed by another
//! stage. Sub-seeds come from the SplitMix64 output function applied to
//! `master + index * GAMMA`, the same construction SplitMix64 itself uses to
//! produce statistically independent streams.

/// Stage labels for [`stage_seed`]. Each pipeline phase owns one slot.
pub mod stage {
    pub const INGEST: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const TRACE: u64 = 4;
    pub const SWEEP: u64 = 5;
}

/// Weyl increment from SplitMix64 (the golden ratio in 64-bit fixed point).
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function: a bijective mix of the input word.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for stream `index` of a run keyed by `master`.
///
/// Distinct indices give (with overwhelming probability) unrelated streams;
/// equal `(master, index)` pairs always give the same seed.
pub fn stage_seed(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(index.wrapping_mul(GAMMA)).wrapping_add(GAMMA))
}
