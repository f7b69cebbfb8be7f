//! Seed derivation.
//!
//! A run has one root 64-bit seed. Record `i` draws from ChaCha8 keyed by the
//! seed with stream id `i`, so the draws for a record depend only on
//! `(seed, i)`: perturbation can run in any order or in parallel and still
//! produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream reserved for split shuffling; record streams use `0..n`.
const SPLIT_STREAM: u64 = u64::MAX;

pub fn record_rng(seed: u64, record: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(record);
    rng
}

pub fn split_rng(seed: u64) -> ChaCha8Rng {
    record_rng(seed, SPLIT_STREAM)
}

/// Seed of trial `t` within a run.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed ^ trial
}
