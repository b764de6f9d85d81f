//! Fixed 64-bit avalanche hashing used wherever a value must be a pure
//! function of its inputs (mock backend draws, McNemar coin flips).
//!
//! The mixer is the SplitMix64 finalizer. Text is folded in with FNV-1a
//! before mixing so that arbitrary strings map to a single word.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Combine a running hash with another word.
#[inline]
pub fn combine(h: u64, v: u64) -> u64 {
    mix64(h ^ mix64(v))
}

/// Map a hash to a float in the open-closed interval (0, 1].
#[inline]
pub fn unit_open_closed(h: u64) -> f64 {
    // 53 high bits -> [0, 2^53), shifted to (0, 2^53]
    ((h >> 11) + 1) as f64 / (1u64 << 53) as f64
}
