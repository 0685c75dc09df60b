//! Tokenization and hashing shared by features, embeddings and the proxy classifier.

/// Lowercased alphanumeric runs. Everything else separates tokens.
pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Hash a token with a namespace byte so unigrams and bigrams do not collide systematically.
pub(crate) fn hash_token(namespace: u8, token: &str) -> u64 {
    let mut buf = Vec::with_capacity(token.len() + 1);
    buf.push(namespace);
    buf.extend_from_slice(token.as_bytes());
    fnv1a(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_split_on_punctuation_and_lowercase() {
        assert_eq!(tokens("Hello, World! A)b"), vec!["hello", "world", "a", "b"]);
        assert!(tokens("  ?? ").is_empty());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
