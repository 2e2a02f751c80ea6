//! MPC_MSG transport between the two compute parties.

use crate::error::Result;
use crate::net::frame::{chunks, Conn, FrameType};
use crate::net::AbortCode;
use crate::oblivious::MpcChannel;

/// One party's end of the compute-pair channel.
///
/// Each MPC_MSG payload is `round u64 BE | more u8 | data`. Every frame carries the
/// next round number for its direction, so numbers strictly increase; a message
/// larger than one frame continues with `more = 1`. The first party sends before
/// receiving, the second receives before sending.
pub struct PeerChannel {
    conn: Conn,
    sends_first: bool,
    next_out: u64,
    next_in: u64,
}

impl PeerChannel {
    pub fn new(conn: Conn, sends_first: bool) -> Self {
        PeerChannel { conn, sends_first, next_out: 0, next_in: 0 }
    }

    fn send_message(&mut self, data: &[u8]) -> Result<()> {
        for (chunk, more) in chunks(data) {
            let mut p = Vec::with_capacity(9 + chunk.len());
            p.extend_from_slice(&self.next_out.to_be_bytes());
            p.push(more as u8);
            p.extend_from_slice(chunk);
            self.conn.send(FrameType::MpcMsg, &p)?;
            self.next_out += 1;
        }
        Ok(())
    }

    fn recv_message(&mut self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        loop {
            let p = self.conn.expect(FrameType::MpcMsg)?;
            if p.len() < 9 {
                return Err(self.conn.abort(AbortCode::Protocol, "MPC_MSG shorter than its header"));
            }
            let round = u64::from_be_bytes(p[..8].try_into().expect("8 bytes"));
            if round != self.next_in {
                return Err(self
                    .conn
                    .abort(AbortCode::Protocol, &format!("round {round} out of order, expected {}", self.next_in)));
            }
            self.next_in += 1;
            out.extend_from_slice(&p[9..]);
            match p[8] {
                0 => return Ok(out),
                1 => {}
                m => return Err(self.conn.abort(AbortCode::Protocol, &format!("bad continuation byte {m}"))),
            }
        }
    }

    /// Rounds exchanged so far, as (sent frames, received frames).
    pub fn rounds(&self) -> (u64, u64) {
        (self.next_out, self.next_in)
    }
}

impl MpcChannel for PeerChannel {
    fn exchange(&mut self, outbound: &[u8]) -> Result<Vec<u8>> {
        if self.sends_first {
            self.send_message(outbound)?;
            self.recv_message()
        } else {
            let inbound = self.recv_message()?;
            self.send_message(outbound)?;
            Ok(inbound)
        }
    }

    fn close(&mut self) -> Result<()> {
        if self.sends_first {
            self.conn.send(FrameType::Bye, &[])?;
            self.conn.expect(FrameType::Bye)?;
        } else {
            self.conn.expect(FrameType::Bye)?;
            self.conn.send(FrameType::Bye, &[])?;
        }
        Ok(())
    }
}

impl Drop for PeerChannel {
    fn drop(&mut self) {
        self.conn.shutdown();
    }
}
