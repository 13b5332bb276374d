//! Counter-based randomness.
//!
//! Every random draw in the simulator is a pure function of a root seed and
//! a small tuple of counters, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one 64-bit key.
#[inline]
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &w in words {
        h = splitmix64(h ^ w);
    }
    h
}

/// Uniform in [0, 1) with 53 bits of precision.
#[inline]
pub fn unit_f64(key: u64) -> f64 {
    (splitmix64(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn uniform(words: &[u64]) -> f64 {
    unit_f64(mix(words))
}

/// Standard normal draw via Box-Muller on two derived uniforms.
pub fn normal(words: &[u64]) -> f64 {
    let k = mix(words);
    let u1 = unit_f64(k ^ 0x5151_5151).max(f64::MIN_POSITIVE);
    let u2 = unit_f64(k ^ 0xA3A3_A3A3_0000);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Stable 64-bit tag for a stream name.
pub fn stream(name: &str) -> u64 {
    // FNV-1a
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent generator for a named sub-stream of a root seed.
pub fn sub_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, stream(name)]))
}

/// Generator for one counter position within a named stream.
pub fn counter_rng(seed: u64, name: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, stream(name), counter]))
}
