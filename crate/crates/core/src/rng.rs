//! Named, counter-based random substreams.
//!
//! Every random draw in the pipeline is taken from a ChaCha stream keyed by
//! `(root seed, tag, index...)`, so results never depend on worker count or
//! on the order in which independent work items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a child seed from a root seed, a tag and a sequence of indices.
pub fn derive_seed(seed: u64, tag: &str, idx: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ fnv1a(tag));
    for &i in idx {
        h = splitmix(h ^ splitmix(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn substream(seed: u64, tag: &str, idx: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, idx))
}
