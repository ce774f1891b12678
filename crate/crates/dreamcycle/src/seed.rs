//! Deterministic seed derivation.
//!
//! Every stochastic stage (episode exploration, Poisson stimulation, network
//! wiring) draws from its own ChaCha8 stream whose seed is mixed from the
//! configured base seed plus a purpose tag and indices. Runs never share or
//! reorder streams, so adding a stage cannot silently shift another stage's
//! draws.

/// FNV-1a over bytes; small, stable, and good enough for id/seed mixing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; decorrelates structurally similar inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base`, a purpose tag, and indices.
pub fn mix(base: u64, tag: &str, nums: &[u64]) -> u64 {
    let mut h = fnv1a64(tag.as_bytes()) ^ base.rotate_left(17);
    for &n in nums {
        h = splitmix64(h ^ n);
    }
    splitmix64(h)
}
