//! Seeded RNG construction and seed derivation.
//!
//! Training derives one sub-seed per purpose (shuffling, dropout masks, layer
//! masks) from the run seed, so adding a consumer never shifts another
//! stream. The generator is pinned to ChaCha12 rather than `StdRng` so the
//! stream cannot change under a `rand` upgrade.

pub type SeededRng = rand_chacha::ChaCha12Rng;

pub fn seeded(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// splitmix64-style combination of a base seed with context words.
pub fn mix(base: u64, parts: &[u64]) -> u64 {
    let mut z = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
