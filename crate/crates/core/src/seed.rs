//! Deterministic seed derivation so every rng stream is keyed by purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a purpose label and integer keys.
pub fn derive_seed(base: u64, purpose: &str, keys: &[u64]) -> u64 {
    // FNV-1a over the label, then splitmix folding.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut s = splitmix64(base ^ splitmix64(h));
    for &k in keys {
        s = splitmix64(s ^ k);
    }
    s
}

/// Seed keyed additionally by a string (e.g. a class key).
pub fn derive_seed_str(base: u64, purpose: &str, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive_seed(base, purpose, &[h])
}

pub fn rng_for(base: u64, purpose: &str, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, purpose, keys))
}
