//! Named random streams split from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives the stream called `name` from `root_seed`.
///
/// The stream depends only on the pair, so adding or reordering draws on one
/// stream never perturbs another.
pub fn stream(root_seed: u64, name: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
