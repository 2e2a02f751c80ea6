//! Private data federation over two-party secret sharing.
//!
//! Data partners split their records into XOR shares and hand one share to each
//! of two compute parties. The compute parties evaluate a fixed clinical-study
//! pipeline (exclusion, cross-site de-duplication, data cube, rollups, small-cell
//! suppression) with oblivious operators whose observable behaviour depends only
//! on public table sizes, and release output shares that only the analyst
//! combines.

pub mod error;
pub mod harness;
pub mod net;
pub mod oblivious;
pub mod relational;
pub mod sharing;
pub mod study;

pub use error::{Error, Result};
