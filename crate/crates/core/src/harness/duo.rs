//! All roles in one process, talking real frames over socket pairs.

use std::sync::mpsc::channel;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::net::compute::{run_session, ComputeResult};
use crate::net::dealer::serve_dealer;
use crate::net::session::{acknowledge, connect, receive_hello, Hello, Role};
use crate::net::upload::{receive_shares, upload_shares};
use crate::net::{Conn, Transcript};
use crate::oblivious::PartyIndex;
use crate::study::pipeline::expected_table_ids;
use crate::study::{open_at_analyst, prepare_upload, CodedRecord, StudyConfig, StudyOutput, Uploads};

/// Everything a local run produced.
pub struct DuoRun {
    pub output: StudyOutput,
    /// First and second compute party.
    pub parties: [ComputeResult; 2],
    /// One transcript per connection, labelled, in a fixed order.
    pub transcripts: Vec<(String, Transcript)>,
    pub elapsed: Duration,
}

impl DuoRun {
    /// `(label, direction, type, length)` of every frame on every connection.
    pub fn shape(&self) -> Vec<(String, Vec<(bool, u8, u32)>)> {
        self.transcripts.iter().map(|(l, t)| (l.clone(), t.shape())).collect()
    }

    /// Bytes on all connections, counted once per frame from the sender's side.
    pub fn wire_bytes(&self) -> u64 {
        self.transcripts
            .iter()
            .flat_map(|(_, t)| t.entries())
            .filter(|e| e.outbound)
            .map(|e| e.len as u64 + 4)
            .sum()
    }
}

fn join<T>(h: thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    h.join().map_err(|_| Error::Protocol("worker thread panicked".into()))?
}

/// Shares every site's records, uploads them, runs both compute parties against
/// a seeded dealer and opens the output. `config.partners` is set to the number
/// of sites.
pub fn run_duo(config: &StudyConfig, sites: &[Vec<CodedRecord>], seed: u64) -> Result<DuoRun> {
    run_duo_with(config, sites, seed, false)
}

/// [`run_duo`], optionally keeping every frame payload in the transcripts.
pub fn run_duo_with(config: &StudyConfig, sites: &[Vec<CodedRecord>], seed: u64, payloads: bool) -> Result<DuoRun> {
    let mut config = config.clone();
    config.partners = sites.len() as u32;
    config.validate()?;
    let start = Instant::now();
    let new_transcript = || if payloads { Transcript::with_payloads() } else { Transcript::new() };
    let hash = config.config_hash();
    let mut transcripts = Vec::new();

    let mut uploads = [Uploads::new(), Uploads::new()];
    let expected = expected_table_ids(&config).into_iter().collect();
    for (p, records) in sites.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (0x5eed_0000 + p as u64));
        let up = prepare_upload(&config, records, &mut rng)?;
        for (j, files) in [&up.first, &up.second].into_iter().enumerate() {
            let t = new_transcript();
            let (client, server) = Conn::pair()?;
            let mut client = client.record_into(&t);
            let mut server = server;
            let received = thread::scope(|s| {
                let c = s.spawn(|| upload_shares(&mut client, p as u32, [p as u8; 16], hash, files));
                let r = s.spawn(|| {
                    let h = receive_hello(&mut server, Some(&hash))?;
                    acknowledge(&mut server, &h)?;
                    receive_shares(&mut server, j as u8 + 1, &expected)
                });
                join(c)?;
                join(r)
            })?;
            for f in received {
                uploads[j].insert(p as u32, f)?;
            }
            transcripts.push((format!("upload partner {p} to party {}", j + 1), t));
        }
    }

    let peer_t = new_transcript();
    let dealer_t = [new_transcript(), new_transcript()];
    let (pa, pb) = Conn::pair()?;
    let (mut pa, mut pb) = (pa.record_into(&peer_t), pb);
    let (d1, s1) = Conn::pair()?;
    let (d2, s2) = Conn::pair()?;
    let (d1, d2) = (d1.record_into(&dealer_t[0]), d2.record_into(&dealer_t[1]));
    let session_id = [0x42; 16];

    let (tx, rx) = channel();
    tx.send(s1).expect("receiver alive");
    tx.send(s2).expect("receiver alive");
    drop(tx);
    let dealer = thread::spawn(move || {
        serve_dealer(
            move || rx.recv().map_err(|_| Error::Protocol("dealer has no more connections".into())),
            ChaCha20Rng::seed_from_u64(seed),
        )
    });

    let [u1, u2] = &uploads;
    let config = &config;
    let results = thread::scope(|s| {
        let a = s.spawn(move || {
            connect(&mut pa, &Hello::new(Role::Compute1, 0, session_id, hash))?;
            run_session(PartyIndex::First, config, u1, session_id, pa, d1)
        });
        let b = s.spawn(move || {
            let h = receive_hello(&mut pb, Some(&hash))?;
            acknowledge(&mut pb, &h)?;
            run_session(PartyIndex::Second, config, u2, h.session_id, pb, d2)
        });
        let ra = join(a);
        let rb = join(b);
        Ok::<_, Error>([ra, rb])
    })?;
    let dealer_result = dealer.join().map_err(|_| Error::Protocol("dealer panicked".into()))?;
    let [ra, rb] = results;
    let parties = [ra?, rb?];
    dealer_result?;
    let output = open_at_analyst(&parties[0].share, &parties[1].share)?;
    transcripts.push(("peer".to_string(), peer_t));
    let [t1, t2] = dealer_t;
    transcripts.push(("dealer to party 1".to_string(), t1));
    transcripts.push(("dealer to party 2".to_string(), t2));
    Ok(DuoRun { output, parties, transcripts, elapsed: start.elapsed() })
}
