//! Keyed random streams.
//!
//! Every random quantity in the crate is read from a ChaCha8 stream selected by
//! `(seed, domain, index)`. The 64-bit seed expands into the ChaCha key; the
//! domain tag and the index are packed into the 64-bit ChaCha stream id
//! (`domain << 48 | index`). A row of a data matrix reads its own stream from
//! word 0, so it depends only on `(seed, row)`: growing `n`, or generating rows
//! on different threads, never perturbs earlier rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains keep e.g. data rows and weight rows
/// independent even when they share a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Domain {
    Inputs = 1,
    Weights = 2,
    Signs = 3,
    Teacher = 4,
    TestInputs = 5,
    Probe = 6,
    LabelDirection = 7,
    CnnWeights = 8,
}

const INDEX_BITS: u32 = 48;

/// Stream for `(seed, domain, index)`. `index` must fit in 48 bits.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}

/// Derive a child seed, e.g. one per replicate of an experiment.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
