//! Reproducible random streams.
//!
//! Every draw comes from ChaCha8 keyed by the user seed. Independent
//! substreams are selected through ChaCha's 64-bit stream id, which packs
//! the purpose, the trial number and a per-purpose index, so any trial can be
//! regenerated alone and trials can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{CVec, C64};

/// Name recorded in output metadata.
pub const RNG_FAMILY: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64 key, stream = purpose<<60 | trial<<24 | index";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Powers = 1,
    Channels = 2,
    Noise = 3,
    /// Instances drawn by tests and the validation suite.
    Instances = 4,
}

const TRIAL_BITS: u32 = 36;
const INDEX_BITS: u32 = 24;

/// Generator for `(purpose, trial, index)` under `seed`.
///
/// Panics if `trial ≥ 2³⁶` or `index ≥ 2²⁴`.
pub fn substream(seed: u64, purpose: Purpose, trial: u64, index: u64) -> ChaCha8Rng {
    assert!(trial < 1 << TRIAL_BITS, "trial {trial} out of range");
    assert!(index < 1 << INDEX_BITS, "substream index {index} out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << (TRIAL_BITS + INDEX_BITS)) | (trial << INDEX_BITS) | index);
    rng
}

/// Circular complex Gaussian with total variance `var` (`var/2` per part).
pub fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

pub fn complex_gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize, var: f64) -> CVec {
    CVec::from_iterator(len, (0..len).map(|_| complex_gaussian(rng, var)))
}
