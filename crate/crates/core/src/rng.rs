//! Seeded random substreams.
//!
//! Every stochastic component draws from a ChaCha8 stream selected by
//! `(master seed, stream id)`. Work is keyed to fixed-size blocks, never to
//! threads, so results do not depend on how the work is partitioned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream-id namespaces, so that e.g. block 3 of the photon simulation and
/// block 3 of the fading sampler never share a stream.
pub mod domain {
    pub const PHOTONS: u64 = 1 << 56;
    pub const NOISE: u64 = 2 << 56;
    pub const FADING: u64 = 3 << 56;
    pub const DRIFT: u64 = 4 << 56;
    pub const TALLY: u64 = 5 << 56;
    pub const BLOCKS: u64 = 6 << 56;
}

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer over a seed and a counter. Used where a value must be
/// reproducible by index without materialising a sequence (pulse classes,
/// Alice's bit values).
pub fn mix64(seed: u64, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) from the top 53 bits of `mix64`.
pub fn unit_f64(seed: u64, counter: u64) -> f64 {
    (mix64(seed, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
