//! Counter-based random substreams.
//!
//! Every random draw is keyed by `(seed, purpose, index)`. The ChaCha block
//! cipher is used in counter mode: the seed and purpose pick the key, the
//! path (or grid) index picks the 64-bit stream. Work can therefore be split
//! across any number of threads without changing a single sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Disjoint uses of randomness. Each purpose owns its own key space, so the
/// Brownian increments of a path never share bits with its default trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Brownian,
    DefaultTrigger,
    Bootstrap,
    Reversed,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Brownian => 0x42_524f_574e,
            Purpose::DefaultTrigger => 0x44_4546_4155,
            Purpose::Bootstrap => 0x42_4f4f_5453,
            Purpose::Reversed => 0x52_4556_4552,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Returns the generator for substream `index` of `purpose` under `seed`.
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(purpose.tag()));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
