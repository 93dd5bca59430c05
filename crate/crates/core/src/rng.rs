//! Seed derivation. Every stochastic component gets its own generator whose
//! seed is a pure function of the run's coordinates, so results never depend
//! on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags mixed into derived seeds.
pub mod tag {
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const INIT: u64 = 0x494e_4954;
    pub const TEACHER: u64 = 0x5445_4143;
    pub const STUDENT: u64 = 0x5354_5544;
    pub const DATA: u64 = 0x4441_5441;
    pub const TRAIN: u64 = 0x0054_524e;
    pub const VALID: u64 = 0x0056_414c;
    pub const TEST: u64 = 0x5445_5354;
    pub const SUBNET: u64 = 0x5355_424e;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a sequence of words.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn rng_from(parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(parts))
}
