//! Stable content fingerprints.
//!
//! Every cache key and provenance id in the crate is a SHA-256 digest over a
//! canonical, length-prefixed field encoding. Length prefixes make the
//! encoding injective (no two distinct field sequences collide by
//! concatenation), and a domain tag keeps fingerprints from different record
//! kinds apart even when their payloads coincide.

use sha2::{Digest, Sha256};

/// Incremental builder for a domain-separated fingerprint.
pub struct FingerprintBuilder {
    hasher: Sha256,
}

impl FingerprintBuilder {
    pub fn new(domain: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((domain.len() as u64).to_be_bytes());
        hasher.update(domain.as_bytes());
        Self { hasher }
    }

    pub fn field(mut self, name: &str, value: &str) -> Self {
        self.push(name);
        self.push(value);
        self
    }

    pub fn field_u64(self, name: &str, value: u64) -> Self {
        self.field(name, &value.to_string())
    }

    /// Floats are keyed by their bit pattern so that textual formatting can
    /// never change an existing fingerprint.
    pub fn field_f64(self, name: &str, value: f64) -> Self {
        self.field(name, &format!("{:016x}", value.to_bits()))
    }

    pub fn field_list(mut self, name: &str, values: &[String]) -> Self {
        self.push(name);
        self.hasher.update((values.len() as u64).to_be_bytes());
        for v in values {
            self.push(v);
        }
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }

    fn push(&mut self, s: &str) {
        self.hasher.update((s.len() as u64).to_be_bytes());
        self.hasher.update(s.as_bytes());
    }
}
