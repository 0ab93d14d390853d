use sha2::{Digest, Sha256};

/// Name written into file headers next to every checksum.
pub const HASH_ALGORITHM: &str = "sha256";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collapse runs of whitespace to one space and trim; case is preserved.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
