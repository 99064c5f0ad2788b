//! Deterministic random streams forked from one scenario seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    InitialState,
    Perturbation,
    Impulse,
    XiHat,
    Signal,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::InitialState => 1,
            Stream::Perturbation => 2,
            Stream::Impulse => 3,
            Stream::XiHat => 4,
            Stream::Signal => 5,
        }
    }
}

/// Root of all randomness in a run; every draw is addressed by `(stream, index)`
/// so results do not depend on evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn rng(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        let key = splitmix64(stream.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
        ChaCha8Rng::seed_from_u64(splitmix64(self.root ^ key))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let t = SeedTree::new(42);
        let a: f64 = t.rng(Stream::Impulse, 3).random();
        let b: f64 = t.rng(Stream::Impulse, 3).random();
        let c: f64 = t.rng(Stream::Impulse, 4).random();
        let d: f64 = t.rng(Stream::Perturbation, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
