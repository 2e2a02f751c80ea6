//! The triple dealer: streams TRIPLE_BLOCK frames to both compute parties.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;

use rand::{CryptoRng, RngCore};

use crate::error::{Error, Result};
use crate::net::frame::{Conn, FrameReader, FrameType, FrameWriter, Stream};
use crate::net::session::{acknowledge, connect, receive_hello, Hello, Role};
use crate::net::AbortCode;
use crate::oblivious::TripleSource;
use crate::sharing::{deal_block, TripleBlock, TRIPLE_BLOCK_SIZE};

/// Blocks buffered per party ahead of demand, besides what the socket holds.
const AHEAD: usize = 4;

/// Compute-party side of the dealer connection.
pub struct NetTriples {
    reader: FrameReader,
    writer: FrameWriter,
    control: Stream,
}

impl NetTriples {
    /// Handshakes with the dealer as `role` and starts reading blocks.
    pub fn open(mut conn: Conn, role: Role, session_id: [u8; 16], config_hash: [u8; 32]) -> Result<Self> {
        connect(&mut conn, &Hello::new(role, 0, session_id, config_hash))?;
        let (reader, writer, control) = conn.into_parts();
        Ok(NetTriples { reader, writer, control })
    }

    /// Tells the dealer this party is done. Blocks still in flight are discarded.
    pub fn finish(mut self) -> Result<()> {
        self.writer.send(FrameType::Bye, &[])?;
        self.control.shutdown();
        Ok(())
    }

    /// Handle for sending BYE after the source has been handed to a party.
    pub fn closer(&self) -> Result<DealerCloser> {
        Ok(DealerCloser { control: self.control.try_clone()? })
    }
}

/// Ends the dealer session from outside the [`crate::oblivious::Party`] that owns the source.
pub struct DealerCloser {
    control: Stream,
}

impl DealerCloser {
    pub fn finish(self) -> Result<()> {
        let mut w = Conn::new(self.control)?;
        w.send(FrameType::Bye, &[])?;
        w.shutdown();
        Ok(())
    }
}

impl TripleSource for NetTriples {
    fn next_block(&mut self) -> Result<TripleBlock> {
        let f = self.reader.recv()?;
        match f.kind {
            FrameType::TripleBlock => TripleBlock::decode(&f.payload),
            _ => Err(crate::net::frame::unexpected(f, FrameType::TripleBlock)),
        }
    }
}

/// Serves one session: accepts connections from `accept` until both compute roles
/// are present, then streams matching triple halves until either party leaves.
///
/// A second claim on a compute role is refused with code 3, a config hash that
/// differs from the first party's with code 2, and a different session id with
/// code 4. Other roles are refused with code 4.
pub fn serve_dealer<R, A>(mut accept: A, mut rng: R) -> Result<()>
where
    R: RngCore + CryptoRng + Send + 'static,
    A: FnMut() -> Result<Conn>,
{
    let mut parties: [Option<(Conn, Hello)>; 2] = [None, None];
    while parties.iter().any(Option::is_none) {
        let mut conn = accept()?;
        let hello = match receive_hello(&mut conn, None) {
            Ok(h) => h,
            Err(e) => {
                eprintln!("dealer: rejected connection: {e}");
                continue;
            }
        };
        let slot = match hello.role {
            Role::Compute1 => 0,
            Role::Compute2 => 1,
            r => {
                conn.abort(AbortCode::Protocol, &format!("dealer does not serve role {r:?}"));
                continue;
            }
        };
        if parties[slot].is_some() {
            conn.abort(AbortCode::DuplicateRole, &format!("role {:?} already connected", hello.role));
            continue;
        }
        if let Some((_, other)) = &parties[1 - slot] {
            if other.config_hash != hello.config_hash {
                let e = conn.abort(AbortCode::ConfigMismatch, "compute parties hold different configs");
                if let Some((mut c, _)) = parties[1 - slot].take() {
                    c.abort(AbortCode::ConfigMismatch, "compute parties hold different configs");
                }
                return Err(e);
            }
            if other.session_id != hello.session_id {
                let e = conn.abort(AbortCode::Protocol, "compute parties announced different sessions");
                if let Some((mut c, _)) = parties[1 - slot].take() {
                    c.abort(AbortCode::Protocol, "compute parties announced different sessions");
                }
                return Err(e);
            }
        }
        acknowledge(&mut conn, &hello)?;
        parties[slot] = Some((conn, hello));
    }

    let conns: Vec<Conn> = parties.into_iter().map(|p| p.expect("both connected").0).collect();
    let (tx1, rx1) = sync_channel::<Vec<u8>>(AHEAD);
    let (tx2, rx2) = sync_channel::<Vec<u8>>(AHEAD);
    let generator = thread::spawn(move || {
        loop {
            let (a, b) = match deal_block(TRIPLE_BLOCK_SIZE, &mut rng) {
                Ok(p) => p,
                Err(_) => return,
            };
            if tx1.send(a.encode()).is_err() || tx2.send(b.encode()).is_err() {
                return;
            }
        }
    });
    let mut handles = Vec::new();
    for (conn, rx) in conns.into_iter().zip([rx1, rx2]) {
        handles.push(thread::spawn(move || stream_blocks(conn, rx)));
    }
    let mut result = Ok(());
    for h in handles {
        let r = h.join().map_err(|_| Error::Protocol("dealer stream thread panicked".into()))?;
        if result.is_ok() {
            result = r;
        }
    }
    let _ = generator.join();
    result
}

/// Writes blocks until the party sends BYE or disconnects.
fn stream_blocks(conn: Conn, rx: Receiver<Vec<u8>>) -> Result<()> {
    let (mut reader, mut writer, control) = conn.into_parts();
    let watch = control.try_clone()?;
    let watcher = thread::spawn(move || {
        let r = match reader.recv() {
            Ok(f) if f.kind == FrameType::Bye => Ok(()),
            Ok(f) => Err(crate::net::frame::unexpected(f, FrameType::Bye)),
            Err(Error::Protocol(_)) => Ok(()),
            Err(e) => Err(e),
        };
        watch.shutdown();
        r
    });
    while let Ok(block) = rx.recv() {
        if writer.send(FrameType::TripleBlock, &block).is_err() {
            break;
        }
    }
    drop(rx);
    control.shutdown();
    watcher.join().map_err(|_| Error::Protocol("dealer watcher panicked".into()))?
}

#[cfg(test)]
mod tests {
    use std::sync::mpsc::channel;

    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::oblivious::Lanes;

    fn spawn_dealer(conns: Vec<Conn>) -> thread::JoinHandle<Result<()>> {
        let (tx, rx) = channel();
        for c in conns {
            tx.send(c).unwrap();
        }
        drop(tx);
        thread::spawn(move || {
            serve_dealer(
                move || rx.recv().map_err(|_| Error::Protocol("no more connections".into())),
                ChaCha20Rng::seed_from_u64(5),
            )
        })
    }

    #[test]
    fn both_parties_receive_matching_halves() {
        let (c1, d1) = Conn::pair().unwrap();
        let (c2, d2) = Conn::pair().unwrap();
        let dealer = spawn_dealer(vec![d1, d2]);
        let t2 = thread::spawn(move || {
            let mut s = NetTriples::open(c2, Role::Compute2, [1; 16], [0; 32]).unwrap();
            let blocks = (0..3).map(|_| s.next_block().unwrap()).collect::<Vec<_>>();
            s.finish().unwrap();
            blocks
        });
        let mut s1 = NetTriples::open(c1, Role::Compute1, [1; 16], [0; 32]).unwrap();
        let b1: Vec<_> = (0..3).map(|_| s1.next_block().unwrap()).collect();
        s1.finish().unwrap();
        let b2 = t2.join().unwrap();
        for (x, y) in b1.iter().zip(&b2) {
            assert_eq!(x.len(), TRIPLE_BLOCK_SIZE);
            let a = x.a.xor(&y.a);
            let b = x.b.xor(&y.b);
            let c = x.c.xor(&y.c);
            assert_eq!(c, a.and(&b));
            assert_ne!(x.a, Lanes::zeros(TRIPLE_BLOCK_SIZE));
        }
        dealer.join().unwrap().unwrap();
    }

    #[test]
    fn duplicate_and_divergent_roles_are_refused() {
        let (c1, d1) = Conn::pair().unwrap();
        let (dup, d_dup) = Conn::pair().unwrap();
        let (c2, d2) = Conn::pair().unwrap();
        let dealer = spawn_dealer(vec![d1, d_dup, d2]);
        let h1 = thread::spawn(move || NetTriples::open(c1, Role::Compute1, [1; 16], [0; 32]).map(|_| ()));
        let e = NetTriples::open(dup, Role::Compute1, [1; 16], [0; 32]).err().unwrap();
        assert!(matches!(e, Error::Aborted { code: AbortCode::DuplicateRole, .. }), "{e}");
        let e = NetTriples::open(c2, Role::Compute2, [1; 16], [9; 32]).err().unwrap();
        assert!(matches!(e, Error::Aborted { code: AbortCode::ConfigMismatch, .. }), "{e}");
        assert!(h1.join().unwrap().is_ok());
        assert!(matches!(dealer.join().unwrap(), Err(Error::Aborted { code: AbortCode::ConfigMismatch, .. })));
    }
}
