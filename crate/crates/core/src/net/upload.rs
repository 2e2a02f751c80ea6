//! SHARE_UPLOAD: data partners hand their share files to a compute party.
//!
//! Each file travels as SHARE_UPLOAD frames with payload `more u8 | bytes`; the
//! concatenated bytes are one encoded [`ShareFile`]. The receiver acknowledges a
//! complete file with a SHARE_UPLOAD frame carrying `table_id u32 | row_count u64`.
//! The partner ends with BYE and the receiver answers BYE.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::net::frame::{chunks, unexpected, Conn, FrameType};
use crate::net::session::{connect, Hello, Role};
use crate::net::AbortCode;
use crate::sharing::ShareFile;

fn ack_payload(f: &ShareFile) -> Vec<u8> {
    let mut p = f.table_id.to_be_bytes().to_vec();
    p.extend_from_slice(&f.row_count.to_be_bytes());
    p
}

/// Partner side: handshakes and sends every file, checking each acknowledgment.
pub fn upload_shares(
    conn: &mut Conn,
    partner_id: u32,
    session_id: [u8; 16],
    config_hash: [u8; 32],
    files: &[ShareFile],
) -> Result<()> {
    connect(conn, &Hello::new(Role::DataPartner, partner_id, session_id, config_hash))?;
    for f in files {
        let bytes = f.encode();
        for (chunk, more) in chunks(&bytes) {
            let mut p = Vec::with_capacity(1 + chunk.len());
            p.push(more as u8);
            p.extend_from_slice(chunk);
            conn.send(FrameType::ShareUpload, &p)?;
        }
        let ack = conn.expect(FrameType::ShareUpload)?;
        if ack != ack_payload(f) {
            return Err(conn.abort(AbortCode::Protocol, "acknowledgment does not echo the table"));
        }
    }
    conn.send(FrameType::Bye, &[])?;
    conn.expect(FrameType::Bye)?;
    Ok(())
}

/// Compute side, after the partner's HELLO was accepted: receives files until BYE.
///
/// Refuses, with ABORT code 4, a file carrying the wrong share index, a table id
/// outside `expected`, a table sent twice, or bytes that do not decode.
pub fn receive_shares(conn: &mut Conn, share_index: u8, expected: &BTreeSet<u32>) -> Result<Vec<ShareFile>> {
    let mut files: Vec<ShareFile> = Vec::new();
    let mut pending = Vec::new();
    loop {
        let f = conn.recv()?;
        match f.kind {
            FrameType::ShareUpload => {
                let Some((&more, chunk)) = f.payload.split_first() else {
                    return Err(conn.abort(AbortCode::Protocol, "empty SHARE_UPLOAD"));
                };
                pending.extend_from_slice(chunk);
                match more {
                    1 => continue,
                    0 => {}
                    m => return Err(conn.abort(AbortCode::Protocol, &format!("bad continuation byte {m}"))),
                }
                let file = match ShareFile::decode(&std::mem::take(&mut pending)) {
                    Ok(file) => file,
                    Err(e) => {
                        conn.abort(AbortCode::Protocol, &e.to_string());
                        return Err(Error::Framing(format!("share upload: {e}")));
                    }
                };
                if file.share_index != share_index {
                    return Err(conn.abort(
                        AbortCode::Protocol,
                        &format!("share index {} sent to the holder of share {share_index}", file.share_index),
                    ));
                }
                if !expected.contains(&file.table_id) {
                    return Err(conn.abort(AbortCode::Protocol, &format!("unexpected table {:#x}", file.table_id)));
                }
                if files.iter().any(|g| g.table_id == file.table_id) {
                    return Err(conn.abort(AbortCode::Protocol, &format!("table {:#x} sent twice", file.table_id)));
                }
                conn.send(FrameType::ShareUpload, &ack_payload(&file))?;
                files.push(file);
            }
            FrameType::Bye => {
                if !pending.is_empty() {
                    return Err(conn.abort(AbortCode::Protocol, "BYE inside a share file"));
                }
                conn.send(FrameType::Bye, &[])?;
                return Ok(files);
            }
            _ => return Err(unexpected(f, FrameType::ShareUpload)),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::thread;

    use super::*;
    use crate::net::session::{acknowledge, receive_hello};

    fn file(share_index: u8, table_id: u32) -> ShareFile {
        ShareFile { version: 1, share_index, table_id, row_count: 3, row_width_bits: 12, payload: vec![0xa5; 6] }
    }

    fn serve(mut conn: Conn, share_index: u8) -> thread::JoinHandle<Result<Vec<ShareFile>>> {
        thread::spawn(move || {
            let h = receive_hello(&mut conn, Some(&[4; 32]))?;
            assert_eq!((h.role, h.partner_id), (Role::DataPartner, 3));
            acknowledge(&mut conn, &h)?;
            receive_shares(&mut conn, share_index, &[1, 2].into_iter().collect())
        })
    }

    #[test]
    fn matching_shares_are_acknowledged() {
        let (mut p, c) = Conn::pair().unwrap();
        let server = serve(c, 1);
        upload_shares(&mut p, 3, [0; 16], [4; 32], &[file(1, 1), file(1, 2)]).unwrap();
        assert_eq!(server.join().unwrap().unwrap(), vec![file(1, 1), file(1, 2)]);
    }

    #[test]
    fn second_share_sent_to_first_party_is_rejected() {
        let (mut p, c) = Conn::pair().unwrap();
        let server = serve(c, 1);
        let e = upload_shares(&mut p, 3, [0; 16], [4; 32], &[file(2, 1)]).unwrap_err();
        assert!(matches!(e, Error::Aborted { code: AbortCode::Protocol, .. }), "{e}");
        assert!(server.join().unwrap().is_err());
    }

    #[test]
    fn duplicate_and_unknown_tables_are_rejected() {
        let (mut p, c) = Conn::pair().unwrap();
        let server = serve(c, 2);
        assert!(upload_shares(&mut p, 3, [0; 16], [4; 32], &[file(2, 1), file(2, 1)]).is_err());
        assert!(server.join().unwrap().is_err());
        let (mut p, c) = Conn::pair().unwrap();
        let server = serve(c, 2);
        assert!(upload_shares(&mut p, 3, [0; 16], [4; 32], &[file(2, 9)]).is_err());
        assert!(server.join().unwrap().is_err());
    }

    #[test]
    fn truncated_payload_is_a_framing_error() {
        let (mut p, c) = Conn::pair().unwrap();
        let server = serve(c, 1);
        connect(&mut p, &Hello::new(Role::DataPartner, 3, [0; 16], [4; 32])).unwrap();
        let mut bytes = file(1, 1).encode();
        bytes.truncate(bytes.len() - 2);
        let mut payload = vec![0];
        payload.extend_from_slice(&bytes);
        p.send(FrameType::ShareUpload, &payload).unwrap();
        let e = p.expect(FrameType::ShareUpload).unwrap_err();
        assert!(matches!(e, Error::Aborted { code: AbortCode::Protocol, .. }), "{e}");
        assert!(matches!(server.join().unwrap(), Err(Error::Framing(_))));
    }
}
