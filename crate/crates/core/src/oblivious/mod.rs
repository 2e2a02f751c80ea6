//! Two-party evaluation of Boolean circuits over XOR shares, with a schedule that
//! depends only on public shapes.

pub mod circuits;
mod lanes;
pub mod local;
mod party;
pub mod scan;
pub mod sort;
mod table;

pub use lanes::Lanes;
pub use party::{GateTape, MpcChannel, Party, PartyIndex, TapeEntry, TapeOp, TripleSource};
pub use scan::ob_scan_group_agg;
pub use sort::{bitonic_sort, SortKey};
pub use table::{Field, ObliviousTable, Schema, SecretRecord};
