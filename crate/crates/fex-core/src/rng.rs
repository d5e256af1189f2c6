//! Deterministic seed derivation.
//!
//! Every random draw in a run descends from one base seed through
//! [`derive_seed`], so a run is reproducible bit-for-bit regardless of
//! how many worker threads score candidates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate. ChaCha has a stable, portable stream
/// for a given seed, unlike `StdRng` whose algorithm may change between
/// releases.
pub type Rng = ChaCha8Rng;

/// Named sub-streams of a base seed. Keeping them in one place avoids
/// accidental stream collisions between modules.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    ExprInit = 1,
    CoarseBatch = 2,
    FrozenBatch = 3,
    FinetuneBatch = 4,
    EvalBatch = 5,
    RegroupInit = 6,
    RegroupBatch = 7,
    ControllerSample = 8,
    CandidateScore = 9,
    FinetunePool = 10,
    ErrorPoints = 11,
    PolishBatch = 12,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index into a fresh seed.
pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(base ^ (stream as u64).wrapping_mul(0xa076_1d64_78bd_642f));
    splitmix64(a ^ index.wrapping_mul(0xe703_7ed1_a0b4_28db))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn rng_for(base: u64, stream: Stream, index: u64) -> Rng {
    rng_from(derive_seed(base, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct() {
        let a = derive_seed(7, Stream::ExprInit, 0);
        let b = derive_seed(7, Stream::CoarseBatch, 0);
        let c = derive_seed(7, Stream::ExprInit, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(
            derive_seed(7, Stream::ExprInit, 3),
            derive_seed(7, Stream::ExprInit, 3)
        );
    }
}
