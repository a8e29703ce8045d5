//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed via
//! `SeedableRng::seed_from_u64`. Child seeds are derived by hashing the
//! parent seed together with a label through the SplitMix64 finalizer, so a
//! tree of independent streams can be rebuilt from one root seed in any
//! execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `seed` and a numeric label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label.wrapping_mul(GOLDEN)))
}

/// Derives a child seed from a textual label (e.g. a component name).
pub fn derive_seed_str(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes, then the numeric derivation
    let h = label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    derive_seed(seed, h)
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
