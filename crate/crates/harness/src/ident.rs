//! Content hashes stamped into every output file.

use sha2::{Digest, Sha256};
use statekl_core::envspace::{Env, EnvKind};

/// Hash of the core and harness sources this binary was built from.
pub const BUILD_ID: &str = env!("STATEKL_BUILD_ID");

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_hash(text: &str) -> String {
    sha256_hex(text.as_bytes())[..16].to_string()
}

/// Hash of the environment's observable contract: dims, bounds, limits.
pub fn env_manifest_hash(kind: EnvKind) -> String {
    let env = kind.make();
    short_hash(&format!("{:?}", env.spec()))
}
