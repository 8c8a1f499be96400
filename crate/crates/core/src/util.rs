/// FNV-1a; stable across platforms and releases, used to derive per-key
/// seeds.
pub(crate) fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(super::stable_hash(""), 0xcbf29ce484222325);
        assert_eq!(super::stable_hash("a"), 0xaf63dc4c8601ec8c);
    }
}
