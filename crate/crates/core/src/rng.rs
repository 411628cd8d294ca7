//! Seeded random streams.
//!
//! Every Monte-Carlo replicate draws from its own ChaCha stream keyed by
//! `(master_seed, domain, index)`, so results never depend on which worker
//! ran which replicate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Generator = 1,
    Assignment = 2,
    AaCalibration = 3,
    Sessions = 4,
    Louvain = 5,
    Exposure = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for replicate `index` under `master_seed`.
pub fn stream(master_seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = splitmix64(master_seed);
    let b = splitmix64(a ^ domain as u64);
    let c = splitmix64(b.rotate_left(17) ^ master_seed);
    let d = splitmix64(c ^ (domain as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    for (chunk, word) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
