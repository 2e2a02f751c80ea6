//! OUTPUT_SHARE delivery from the compute parties to the analyst.
//!
//! Payload: `session_id[16] | more u8 | bytes`; the concatenated bytes are one
//! encoded [`OutputShare`]. The analyst answers BYE once the share is complete.

use crate::error::{Error, Result};
use crate::net::frame::{chunks, Conn, FrameType};
use crate::net::session::{acknowledge, connect, receive_hello, Hello, Role};
use crate::net::AbortCode;
use crate::study::{open_at_analyst, OutputShare, StudyOutput};

/// Compute side: delivers this party's output share.
pub fn send_output(conn: &mut Conn, config_hash: [u8; 32], share: &OutputShare) -> Result<()> {
    let role = Role::compute(share.share_index);
    connect(conn, &Hello::new(role, 0, share.session_id, config_hash))?;
    let bytes = share.encode();
    for (chunk, more) in chunks(&bytes) {
        let mut p = share.session_id.to_vec();
        p.push(more as u8);
        p.extend_from_slice(chunk);
        conn.send(FrameType::OutputShare, &p)?;
    }
    conn.expect(FrameType::Bye)?;
    Ok(())
}

fn receive_output(conn: &mut Conn, hello: &Hello) -> Result<OutputShare> {
    let mut bytes = Vec::new();
    loop {
        let p = conn.expect(FrameType::OutputShare)?;
        if p.len() < 17 || p[..16] != hello.session_id {
            return Err(conn.abort(AbortCode::Protocol, "OUTPUT_SHARE for another session"));
        }
        bytes.extend_from_slice(&p[17..]);
        match p[16] {
            1 => continue,
            0 => break,
            m => return Err(conn.abort(AbortCode::Protocol, &format!("bad continuation byte {m}"))),
        }
    }
    let share = match OutputShare::decode(&bytes) {
        Ok(s) => s,
        Err(e) => return Err(conn.abort(AbortCode::Protocol, &e.to_string())),
    };
    if Role::compute(share.share_index) != hello.role || share.session_id != hello.session_id {
        return Err(conn.abort(AbortCode::Protocol, "output share does not match the announced session"));
    }
    conn.send(FrameType::Bye, &[])?;
    Ok(share)
}

/// Accepts connections until both compute parties delivered their shares.
///
/// A repeated compute role is refused with code 3 and a config hash differing from
/// the first party's with code 2.
pub fn collect_outputs<A>(mut accept: A) -> Result<(OutputShare, OutputShare)>
where
    A: FnMut() -> Result<Conn>,
{
    let mut got: [Option<(OutputShare, [u8; 32])>; 2] = [None, None];
    while got.iter().any(Option::is_none) {
        let mut conn = accept()?;
        let hello = match receive_hello(&mut conn, None) {
            Ok(h) => h,
            Err(e) => {
                eprintln!("analyst: rejected connection: {e}");
                continue;
            }
        };
        let slot = match hello.role {
            Role::Compute1 => 0,
            Role::Compute2 => 1,
            r => {
                conn.abort(AbortCode::Protocol, &format!("analyst does not serve role {r:?}"));
                continue;
            }
        };
        if got[slot].is_some() {
            conn.abort(AbortCode::DuplicateRole, &format!("role {:?} already delivered", hello.role));
            continue;
        }
        if let Some((_, h)) = &got[1 - slot] {
            if *h != hello.config_hash {
                return Err(conn.abort(AbortCode::ConfigMismatch, "compute parties hold different configs"));
            }
        }
        acknowledge(&mut conn, &hello)?;
        let share = receive_output(&mut conn, &hello)?;
        got[slot] = Some((share, hello.config_hash));
    }
    let [a, b] = got.map(|g| g.expect("both delivered").0);
    Ok((a, b))
}

/// Collects both shares and reconstructs the result tables.
pub fn run_analyst<A>(accept: A) -> Result<StudyOutput>
where
    A: FnMut() -> Result<Conn>,
{
    let (a, b) = collect_outputs(accept)?;
    open_at_analyst(&a, &b).map_err(|e| match e {
        Error::ShareMismatch(m) => Error::Protocol(m),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::mpsc::channel;
    use std::thread;

    use super::*;

    fn share(index: u8, session: u8) -> OutputShare {
        OutputShare { share_index: index, session_id: [session; 16], years: vec![2020], values: vec![], flags: vec![] }
    }

    fn analyst(conns: Vec<Conn>) -> thread::JoinHandle<Result<(OutputShare, OutputShare)>> {
        let (tx, rx) = channel();
        for c in conns {
            tx.send(c).unwrap();
        }
        drop(tx);
        thread::spawn(move || collect_outputs(move || rx.recv().map_err(|_| Error::Protocol("closed".into()))))
    }

    #[test]
    fn both_shares_are_collected() {
        let (mut a, x) = Conn::pair().unwrap();
        let (mut b, y) = Conn::pair().unwrap();
        let h = analyst(vec![x, y]);
        let t = thread::spawn(move || send_output(&mut b, [0; 32], &share(2, 1)));
        send_output(&mut a, [0; 32], &share(1, 1)).unwrap();
        t.join().unwrap().unwrap();
        let (s1, s2) = h.join().unwrap().unwrap();
        assert_eq!((s1, s2), (share(1, 1), share(2, 1)));
    }

    #[test]
    fn duplicate_role_is_refused() {
        let (mut a, x) = Conn::pair().unwrap();
        let (mut dup, y) = Conn::pair().unwrap();
        let _h = analyst(vec![x, y]);
        send_output(&mut a, [0; 32], &share(1, 1)).unwrap();
        let e = send_output(&mut dup, [0; 32], &share(1, 1)).unwrap_err();
        assert!(matches!(e, Error::Aborted { code: AbortCode::DuplicateRole, .. }), "{e}");
    }

    #[test]
    fn shares_from_different_sessions_are_rejected() {
        let (mut a, x) = Conn::pair().unwrap();
        let (mut b, y) = Conn::pair().unwrap();
        let (tx, rx) = channel();
        tx.send(x).unwrap();
        tx.send(y).unwrap();
        let h = thread::spawn(move || run_analyst(move || rx.recv().map_err(|_| Error::Protocol("closed".into()))));
        send_output(&mut a, [0; 32], &share(1, 1)).unwrap();
        send_output(&mut b, [0; 32], &share(2, 2)).unwrap();
        assert!(matches!(h.join().unwrap(), Err(Error::Protocol(_))));
    }
}
