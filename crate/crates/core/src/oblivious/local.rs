//! In-memory channel and seeded triple supply for running both parties in one process.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::oblivious::circuits::{slices_from_values, values_from_slices, xor_slices};
use crate::oblivious::{Lanes, MpcChannel, ObliviousTable, Party, PartyIndex, Schema, TripleSource};
use crate::sharing::{deal_block, TripleBlock, TRIPLE_BLOCK_SIZE};

pub struct MemChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemChannel {
    pub fn pair() -> (MemChannel, MemChannel) {
        let (t1, r1) = channel();
        let (t2, r2) = channel();
        (MemChannel { tx: t1, rx: r2 }, MemChannel { tx: t2, rx: r1 })
    }
}

impl MpcChannel for MemChannel {
    fn exchange(&mut self, outbound: &[u8]) -> Result<Vec<u8>> {
        self.tx
            .send(outbound.to_vec())
            .map_err(|_| Error::Protocol("peer channel closed".into()))?;
        self.rx.recv().map_err(|_| Error::Protocol("peer channel closed".into()))
    }
}

/// Both parties replay the same seeded dealer and keep their own half.
pub struct SeededTriples {
    rng: ChaCha20Rng,
    index: PartyIndex,
}

impl SeededTriples {
    pub fn pair(seed: u64) -> (SeededTriples, SeededTriples) {
        (
            SeededTriples { rng: ChaCha20Rng::seed_from_u64(seed), index: PartyIndex::First },
            SeededTriples { rng: ChaCha20Rng::seed_from_u64(seed), index: PartyIndex::Second },
        )
    }
}

impl TripleSource for SeededTriples {
    fn next_block(&mut self) -> Result<TripleBlock> {
        let (p1, p2) = deal_block(TRIPLE_BLOCK_SIZE, &mut self.rng)?;
        Ok(match self.index {
            PartyIndex::First => p1,
            PartyIndex::Second => p2,
        })
    }
}

pub fn local_parties(seed: u64) -> (Party, Party) {
    let (c1, c2) = MemChannel::pair();
    let (t1, t2) = SeededTriples::pair(seed);
    (
        Party::new(PartyIndex::First, Box::new(c1), Box::new(t1)),
        Party::new(PartyIndex::Second, Box::new(c2), Box::new(t2)),
    )
}

/// Runs `f` as both parties on two threads and returns both results.
pub fn run_local_pair<R, F>(seed: u64, f: F) -> Result<(R, R)>
where
    R: Send,
    F: Fn(&mut Party) -> Result<R> + Sync,
{
    let (mut p1, mut p2) = local_parties(seed);
    let f = &f;
    thread::scope(|s| {
        let h1 = s.spawn(move || f(&mut p1));
        let h2 = s.spawn(move || f(&mut p2));
        let r1 = h1.join().expect("party thread panicked");
        let r2 = h2.join().expect("party thread panicked");
        Ok((r1?, r2?))
    })
}

/// A plaintext row: one value per schema field, then the dummy flag.
pub type PlainRow = (Vec<u64>, bool);

/// Splits a plaintext table into the two parties' oblivious tables.
pub fn share_plain_table<R: rand::RngCore + rand::CryptoRng>(
    schema: &Schema,
    rows: &[PlainRow],
    rng: &mut R,
) -> Result<(ObliviousTable, ObliviousTable)> {
    let n = rows.len();
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    for (fi, f) in schema.fields().iter().enumerate() {
        let values: Vec<u64> = rows.iter().map(|r| r.0[fi]).collect();
        let masks: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
        let other: Vec<u64> = values.iter().zip(&masks).map(|(v, m)| v ^ m).collect();
        c1.push(slices_from_values(&masks, f.width));
        c2.push(slices_from_values(&other, f.width));
    }
    let d1 = Lanes::from_fn(n, |_| rng.next_u32() & 1 == 1);
    let d2 = Lanes::from_fn(n, |i| d1.get(i) ^ rows[i].1);
    Ok((ObliviousTable::new(schema.clone(), c1, d1)?, ObliviousTable::new(schema.clone(), c2, d2)?))
}

/// Reconstructs a plaintext table from both parties' shares.
pub fn open_table(a: &ObliviousTable, b: &ObliviousTable) -> Vec<PlainRow> {
    let cols: Vec<Vec<u64>> = a
        .columns()
        .iter()
        .zip(b.columns())
        .map(|(x, y)| values_from_slices(&xor_slices(x, y)))
        .collect();
    let dummy = a.dummy().xor(b.dummy());
    (0..a.len()).map(|i| (cols.iter().map(|c| c[i]).collect(), dummy.get(i))).collect()
}
