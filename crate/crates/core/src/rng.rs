//! Seeded, splittable randomness.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the master
//! seed plus a purpose path (e.g. `["round", "2", "reference"]`), so draws for
//! one purpose never shift the draws for another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Master seed from which purpose-specific streams are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// 256-bit key for the stream named by `path`.
    pub fn key(&self, path: &[&str]) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"mixopt-seed-v1");
        hasher.update(self.master.to_le_bytes());
        for part in path {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        hasher.finalize().into()
    }

    pub fn rng(&self, path: &[&str]) -> Rng {
        ChaCha8Rng::from_seed(self.key(path))
    }

    /// A 64-bit child seed, for handing to components that take a plain seed.
    pub fn child(&self, path: &[&str]) -> SeedTree {
        let key = self.key(path);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&key[..8]);
        SeedTree::new(u64::from_le_bytes(bytes))
    }
}
