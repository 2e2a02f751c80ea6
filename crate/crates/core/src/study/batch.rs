//! Hash partitioning of patients into batches.

use sha2::{Digest, Sha256};

/// `u64` from the last 8 bytes of SHA-256 over the big-endian token, modulo `batch_count`.
pub fn assign_batch(token: u64, batch_count: u32) -> u32 {
    assert!(batch_count >= 1, "batch_count must be positive");
    let digest = Sha256::digest(token.to_be_bytes());
    let low = u64::from_be_bytes(digest[24..32].try_into().expect("8 bytes"));
    (low % batch_count as u64) as u32
}

/// Splits items into `batch_count` groups by token, keeping input order within each group.
pub fn partition<T: Clone>(items: &[T], token: impl Fn(&T) -> u64, batch_count: u32) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new(); batch_count as usize];
    for it in items {
        out[assign_batch(token(it), batch_count) as usize].push(it.clone());
    }
    out
}
