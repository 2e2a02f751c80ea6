//! CSV ingestion, synthetic data, the plaintext oracle, and local runners.

pub mod bench;
pub mod csvio;
pub mod duo;
pub mod generate;
pub mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// A generator seeded with `seed`, or from the operating system when absent.
pub fn rng_from(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}
