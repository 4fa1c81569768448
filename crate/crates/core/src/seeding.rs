use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent 64-bit seed for item `index` of a stream seeded by `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 over the combined input
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
