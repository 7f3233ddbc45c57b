//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, purpose, step, index)`. Each particle draws
//! from its own stream, so results do not depend on which worker evaluates it
//! or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Truth,
    Prior,
    Propagate,
    Epsilon,
    Scenario,
}

impl Purpose {
    fn salt(self) -> u64 {
        match self {
            Purpose::Truth => 0x5452_5554_4800_0001,
            Purpose::Prior => 0x5052_494f_5200_0002,
            Purpose::Propagate => 0x5052_4f50_4100_0003,
            Purpose::Epsilon => 0x4550_5349_4c00_0004,
            Purpose::Scenario => 0x5343_454e_4100_0005,
        }
    }
}

/// The generator for one `(seed, purpose, step, index)` address.
/// `index` must fit in 32 bits.
pub fn stream(seed: u64, purpose: Purpose, step: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(index <= u64::from(u32::MAX));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.salt());
    rng.set_stream((step << 32) | index);
    rng
}
