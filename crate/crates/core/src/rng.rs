//! Seed derivation for schedule-independent random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// Stream tags keep independent consumers of one seed apart.
pub mod tags {
    pub const INIT: u64 = 0x494e4954;
    pub const CLIENT: u64 = 0x434c4e54;
    pub const SAMPLE: u64 = 0x53414d50;
    pub const PARTITION: u64 = 0x50415254;
    pub const SPLIT: u64 = 0x53504c54;
    pub const DATA: u64 = 0x44415441;
    pub const MODEL: u64 = 0x4d4f444c;
    pub const LOCALS: u64 = 0x4c4f434c;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a tuple of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c909, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(parts))
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}
