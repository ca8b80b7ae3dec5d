//! Small shared helpers.

/// FNV-1a over bytes. Used to derive stable per-item RNG seeds; the standard
/// library hasher is not stable across releases, this is.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Round to `digits` decimal places, ties to even.
pub fn round_half_even(x: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    (x * scale).round_ties_even() / scale
}
