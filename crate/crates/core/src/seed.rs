//! Labelled, hierarchical seeding.
//!
//! A [`SeedStream`] is a root seed plus a path of labels. Each distinct path
//! hashes to its own ChaCha key, so consumers can derive sub-streams
//! ("fold", "replication:17", ...) without caring about the order in which
//! other consumers draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedStream {
    root: u64,
    path: Vec<String>,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        SeedStream {
            root,
            path: Vec::new(),
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    pub fn derive(&self, label: impl Into<String>) -> SeedStream {
        let mut path = self.path.clone();
        path.push(label.into());
        SeedStream {
            root: self.root,
            path,
        }
    }

    /// Shorthand for `derive(format!("{label}:{index}"))`.
    pub fn derive_indexed(&self, label: &str, index: usize) -> SeedStream {
        self.derive(format!("{label}:{index}"))
    }

    pub fn key(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"pearl-seed-v1");
        hasher.update(self.root.to_le_bytes());
        for label in &self.path {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        key
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }
}
