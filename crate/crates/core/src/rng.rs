//! Keyed, counter-based random streams.
//!
//! Every draw in the crate comes from a stream derived from a root seed and a
//! tuple of counters (role, iteration, element, ...). Derivation is a pure
//! function of the key, so results do not depend on evaluation order or on
//! how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{ImageTensor, Shape};

/// Stream roles. Distinct roles never share a stream for the same counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Init = 1,
    DataOrder = 2,
    TimeStep = 3,
    TrainNoise = 4,
    InitialNoise = 5,
    AncestralNoise = 6,
    Phantom = 7,
    DoseNoise = 8,
    Split = 9,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a family of keyed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed))
    }

    /// Child key for `(role, counters...)`.
    pub fn derive(self, role: Role, counters: &[u64]) -> StreamKey {
        let mut h = splitmix64(self.0 ^ (role as u64).wrapping_mul(GOLDEN));
        for &c in counters {
            h = splitmix64(h ^ splitmix64(c.wrapping_add(1)));
        }
        StreamKey(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn stream(self, role: Role, counters: &[u64]) -> ChaCha8Rng {
        self.derive(role, counters).rng()
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

/// Standard-normal tensor drawn from `rng`.
pub fn normal_tensor<R: rand::Rng + ?Sized>(rng: &mut R, shape: Shape) -> ImageTensor {
    let mut t = ImageTensor::zeros(shape);
    for v in t.as_mut_slice() {
        *v = StandardNormal.sample(rng);
    }
    t
}
