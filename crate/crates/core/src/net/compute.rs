//! Compute-party and data-partner roles over TCP.

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::net::dealer::NetTriples;
use crate::net::frame::{Conn, Transcript};
use crate::net::peer::PeerChannel;
use crate::net::session::{
    accept_until, acknowledge, check_config, connect, dial, new_session_id, receive_hello, Hello, Role,
};
use crate::net::upload::{receive_shares, upload_shares};
use crate::net::AbortCode;
use crate::oblivious::{GateTape, Party, PartyIndex};
use crate::study::pipeline::expected_table_ids;
use crate::study::{run_study, OutputShare, PartnerUpload, StepLog, StudyConfig, Uploads};

/// What one compute party ends a session with.
#[derive(Clone, Debug)]
pub struct ComputeResult {
    pub share: OutputShare,
    pub log: StepLog,
    pub tape: GateTape,
}

/// Runs the study over an established peer connection and a fresh dealer connection.
///
/// `peer` must already have completed its handshake. Any local failure is reported
/// to the peer with ABORT before returning.
pub fn run_session(
    index: PartyIndex,
    config: &StudyConfig,
    uploads: &Uploads,
    session_id: [u8; 16],
    peer: Conn,
    dealer: Conn,
) -> Result<ComputeResult> {
    let role = Role::compute(index.share_index());
    let peer_control = peer.control()?;
    let triples = NetTriples::open(dealer, role, session_id, config.config_hash())?;
    let closer = triples.closer()?;
    let mut party = Party::new(index, Box::new(PeerChannel::new(peer, index == PartyIndex::First)), Box::new(triples));
    let mut log = StepLog::default();
    let outcome = run_study(&mut party, config, uploads, session_id, &mut log).and_then(|share| {
        party.close()?;
        Ok(share)
    });
    let tape = party.tape().clone();
    match outcome {
        Ok(share) => {
            closer.finish()?;
            Ok(ComputeResult { share, log, tape })
        }
        Err(e) => {
            if !matches!(e, Error::Aborted { .. }) {
                if let Ok(mut c) = Conn::new(peer_control) {
                    c.abort(AbortCode::Protocol, &e.to_string());
                }
            }
            let _ = closer.finish();
            Err(e)
        }
    }
}

/// Addresses and limits for a compute party running over TCP.
#[derive(Clone, Debug)]
pub struct ComputeNode {
    pub index: PartyIndex,
    pub config: StudyConfig,
    /// The second party's address; dialled by the first party only.
    pub peer: Option<String>,
    pub dealer: String,
    /// How long to wait for uploads, the peer and the dealer.
    pub timeout: Duration,
    /// Records frames on the peer and dealer connections when set.
    pub transcript: Option<Transcript>,
}

#[derive(Default)]
struct NodeState {
    uploads: Uploads,
    partners_seen: BTreeSet<u32>,
    peer: Option<(Conn, [u8; 16])>,
    error: Option<Error>,
}

type Shared = Arc<(Mutex<NodeState>, Condvar)>;

impl ComputeNode {
    /// Accepts uploads (and, at the second party, the first party) on `listener`,
    /// then runs the study.
    pub fn run(&self, listener: TcpListener) -> Result<ComputeResult> {
        if self.index == PartyIndex::First && self.peer.is_none() {
            return Err(Error::Config("the first compute party needs the peer address".into()));
        }
        let deadline = Instant::now() + self.timeout;
        listener.set_nonblocking(true)?;
        let state: Shared = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let (state, stop, node) = (state.clone(), stop.clone(), self.clone());
            thread::spawn(move || accept_loop(&listener, &state, &stop, &node))
        };
        let ready = self.wait_ready(&state, deadline);
        stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        ready?;

        let (uploads, peer) = {
            let mut s = state.0.lock().expect("node state");
            (std::mem::take(&mut s.uploads), s.peer.take())
        };
        let remaining = deadline.saturating_duration_since(Instant::now()).max(Duration::from_secs(1));
        let hash = self.config.config_hash();
        let (peer, session_id) = match self.index {
            PartyIndex::First => {
                let sid = new_session_id();
                let mut c = self.record(dial(self.peer.as_deref().expect("checked above"), remaining)?);
                connect(&mut c, &Hello::new(Role::Compute1, 0, sid, hash))?;
                (c, sid)
            }
            PartyIndex::Second => peer.expect("peer present when ready"),
        };
        let dealer = self.record(dial(&self.dealer, remaining)?);
        run_session(self.index, &self.config, &uploads, session_id, peer, dealer)
    }

    fn record(&self, conn: Conn) -> Conn {
        match &self.transcript {
            Some(t) => conn.record_into(t),
            None => conn,
        }
    }

    fn wait_ready(&self, state: &Shared, deadline: Instant) -> Result<()> {
        let (lock, cv) = &**state;
        let mut s = lock.lock().expect("node state");
        loop {
            if let Some(e) = s.error.take() {
                return Err(e);
            }
            let partners = s.uploads.partners();
            let uploads_done = partners.len() == self.config.partners as usize
                && partners.iter().all(|p| s.uploads.has_all(*p, &self.config));
            if uploads_done && (self.index == PartyIndex::First || s.peer.is_some()) {
                return Ok(());
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Protocol(format!(
                    "timed out with {} of {} partners uploaded{}",
                    partners.len(),
                    self.config.partners,
                    if self.index == PartyIndex::Second && s.peer.is_none() { " and no peer" } else { "" }
                )));
            }
            s = cv.wait_timeout(s, deadline - now).expect("node state").0;
        }
    }
}

fn accept_loop(listener: &TcpListener, state: &Shared, stop: &AtomicBool, node: &ComputeNode) {
    while !stop.load(Ordering::SeqCst) {
        match accept_until(listener, Instant::now() + Duration::from_millis(100)) {
            Ok(Some(conn)) => {
                let (state, node) = (state.clone(), node.clone());
                thread::spawn(move || {
                    if let Err(e) = handle_conn(conn, &state, &node) {
                        fail(&state, e);
                    }
                });
            }
            Ok(None) => {}
            Err(e) => {
                fail(state, e);
                return;
            }
        }
    }
}

fn fail(state: &Shared, e: Error) {
    let mut s = state.0.lock().expect("node state");
    s.error.get_or_insert(e);
    state.1.notify_all();
}

/// Serves one inbound connection. Returns an error only for failures that end the
/// session. A refused handshake from a partner or a stray role is not one; a
/// refused handshake from the peer compute party is.
fn handle_conn(mut conn: Conn, state: &Shared, node: &ComputeNode) -> Result<()> {
    let Ok(hello) = receive_hello(&mut conn, None) else {
        return Ok(());
    };
    let mismatch = check_config(&mut conn, &hello, &node.config.config_hash());
    if hello.role == Role::Compute1 && node.index == PartyIndex::Second {
        mismatch?;
    } else if mismatch.is_err() {
        return Ok(());
    }
    match hello.role {
        Role::DataPartner => {
            {
                let mut s = state.0.lock().expect("node state");
                if s.partners_seen.contains(&hello.partner_id) {
                    conn.abort(AbortCode::DuplicateRole, &format!("partner {} already connected", hello.partner_id));
                    return Ok(());
                }
                if s.partners_seen.len() >= node.config.partners as usize {
                    conn.abort(AbortCode::Protocol, "all partners already connected");
                    return Ok(());
                }
                s.partners_seen.insert(hello.partner_id);
            }
            acknowledge(&mut conn, &hello)?;
            let expected = expected_table_ids(&node.config).into_iter().collect();
            let files = receive_shares(&mut conn, node.index.share_index(), &expected)?;
            let mut s = state.0.lock().expect("node state");
            for f in files {
                s.uploads.insert(hello.partner_id, f)?;
            }
            state.1.notify_all();
            Ok(())
        }
        Role::Compute1 if node.index == PartyIndex::Second => {
            let mut s = state.0.lock().expect("node state");
            if s.peer.is_some() {
                conn.abort(AbortCode::DuplicateRole, "compute_1 already connected");
                return Ok(());
            }
            acknowledge(&mut conn, &hello)?;
            let conn = match &node.transcript {
                Some(t) => conn.record_into(t),
                None => conn,
            };
            s.peer = Some((conn, hello.session_id));
            state.1.notify_all();
            Ok(())
        }
        r => {
            conn.abort(AbortCode::Protocol, &format!("role {r:?} is not served here"));
            Ok(())
        }
    }
}

/// Data-partner role: sends the first shares to `alice` and the second to `bob`.
pub fn run_partner(
    config: &StudyConfig,
    partner_id: u32,
    upload: &PartnerUpload,
    alice: &str,
    bob: &str,
    timeout: Duration,
) -> Result<()> {
    let hash = config.config_hash();
    for (addr, files) in [(alice, &upload.first), (bob, &upload.second)] {
        let mut conn = dial(addr, timeout)?;
        upload_shares(&mut conn, partner_id, new_session_id(), hash, files)?;
    }
    Ok(())
}
