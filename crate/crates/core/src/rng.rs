//! Seeded randomness. Every random decision is drawn from a stream keyed by
//! the run seed plus a label, so results never depend on iteration or
//! thread scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of labels into a new 64-bit seed.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for label in labels {
        for &b in label.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        // separator so ["ab", "c"] != ["a", "bc"]
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

pub fn stream(seed: u64, labels: &[&str]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, labels))
}
