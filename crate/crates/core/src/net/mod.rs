//! Wire protocol and role state machines.

pub mod analyst;
pub mod compute;
pub mod dealer;
pub mod frame;
pub mod peer;
pub mod session;
pub mod upload;

pub use frame::{Conn, Frame, FrameType, Stream, Transcript, TranscriptEntry, MAX_FRAME_LEN};
pub use session::{Hello, Role, PROTOCOL_VERSION};

/// Reason code carried in the first byte of an ABORT payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AbortCode {
    VersionMismatch = 1,
    ConfigMismatch = 2,
    DuplicateRole = 3,
    Protocol = 4,
}

impl AbortCode {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => AbortCode::VersionMismatch,
            2 => AbortCode::ConfigMismatch,
            3 => AbortCode::DuplicateRole,
            4 => AbortCode::Protocol,
            _ => return None,
        })
    }
}
