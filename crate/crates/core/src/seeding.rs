//! Deterministic derivation of independent RNG streams from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th member of the named stream under `base`.
///
/// Streams with different names never share a seed sequence, so e.g. graph
/// generation and function generation stay decoupled when one of them draws
/// more numbers.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a over the stream tag
    let mut tag = 0xcbf2_9ce4_8422_2325u64;
    for b in stream.bytes() {
        tag ^= u64::from(b);
        tag = tag.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(base ^ tag).wrapping_add(index))
}

pub fn rng_for(base: u64, stream: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, stream, index))
}
