//! Hashing trick for high-cardinality categorical values.

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

fn fnv1a64_parts(parts: &[&[u8]]) -> u64 {
    parts.iter().flat_map(|p| p.iter()).fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Maps a raw categorical value to a token id in `[0, vocab_size)`.
///
/// The empty string is the missing value and maps to the reserved id 0.
/// Everything else hashes `"<field>:<value>"` into `1..vocab_size`, so the
/// same value in two different fields lands in unrelated buckets.
pub fn hash_encode(field_name: &str, raw_value: &str, vocab_size: u32) -> u32 {
    debug_assert!(vocab_size >= 2, "vocab_size must be at least 2");
    if raw_value.is_empty() {
        return 0;
    }
    let h = fnv1a64_parts(&[field_name.as_bytes(), b":", raw_value.as_bytes()]);
    1 + (h % u64::from(vocab_size - 1)) as u32
}
