//! Labelled random sub-streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type DeterministicGenerator = ChaCha8Rng;

/// Returns the stream for `(seed, label)`.
///
/// The ChaCha key is the SHA-256 of the little-endian seed followed by the
/// label bytes, so distinct labels give unrelated streams.
pub fn derive_rng(seed: u64, stream_label: &str) -> DeterministicGenerator {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream_label.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Stream labels used by the trainer and harness.
pub mod streams {
    pub const DATA: &str = "data";
    pub const SPLIT: &str = "split";
    pub const INIT: &str = "init";

    pub fn shuffle(epoch: usize) -> String {
        format!("shuffle/{epoch}")
    }

    pub fn select(epoch: usize) -> String {
        format!("select/{epoch}")
    }
}
