use crate::error::{Error, Result};
use crate::oblivious::Lanes;
use crate::sharing::TripleBlock;

/// Ordered duplex byte channel between the two compute parties.
///
/// One call is one protocol round: this party's bytes go out and the peer's bytes
/// for the same round come back.
pub trait MpcChannel: Send {
    fn exchange(&mut self, outbound: &[u8]) -> Result<Vec<u8>>;

    /// Ends the session with the peer.
    fn close(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Supplies this party's half of dealer-issued AND triples, block by block.
pub trait TripleSource: Send {
    fn next_block(&mut self) -> Result<TripleBlock>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PartyIndex {
    First,
    Second,
}

impl PartyIndex {
    /// 1 or 2, matching the share index this party holds.
    pub fn share_index(self) -> u8 {
        match self {
            PartyIndex::First => 1,
            PartyIndex::Second => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TapeOp {
    And,
    Reveal,
    Exchange,
    CompareExchanges,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TapeEntry {
    pub op: TapeOp,
    pub lanes: u64,
}

/// Record of every interactive step a party performed, in order.
///
/// Everything here is a function of public shapes only; two runs over inputs of
/// equal shape produce equal tapes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GateTape {
    pub entries: Vec<TapeEntry>,
    pub and_gates: u64,
    pub rounds: u64,
    pub triple_cursor: u64,
    pub compare_exchanges: u64,
    pub bytes_sent: u64,
}

impl GateTape {
    fn push(&mut self, op: TapeOp, lanes: u64) {
        self.entries.push(TapeEntry { op, lanes });
    }
}

struct TriplePool {
    source: Box<dyn TripleSource>,
    block: Option<TripleBlock>,
    offset: usize,
}

impl TriplePool {
    fn take(&mut self, n: usize) -> Result<TripleBlock> {
        let mut out = TripleBlock { a: Lanes::default(), b: Lanes::default(), c: Lanes::default() };
        let mut need = n;
        while need > 0 {
            let exhausted = self.block.as_ref().map_or(true, |b| self.offset == b.len());
            if exhausted {
                let next = self.source.next_block()?;
                if next.is_empty() {
                    return Err(Error::TriplesExhausted);
                }
                self.block = Some(next);
                self.offset = 0;
            }
            let block = self.block.as_ref().expect("block loaded above");
            let k = need.min(block.len() - self.offset);
            if self.offset == 0 && k == block.len() && out.a.is_empty() {
                out = self.block.take().expect("block loaded above");
                self.offset = 0;
            } else {
                out.a.append(&block.a.extract(self.offset, k));
                out.b.append(&block.b.extract(self.offset, k));
                out.c.append(&block.c.extract(self.offset, k));
                self.offset += k;
            }
            need -= k;
        }
        Ok(out)
    }
}

/// One compute party's view of a two-party session.
pub struct Party {
    index: PartyIndex,
    channel: Box<dyn MpcChannel>,
    triples: TriplePool,
    tape: GateTape,
}

impl Party {
    pub fn new(index: PartyIndex, channel: Box<dyn MpcChannel>, triples: Box<dyn TripleSource>) -> Self {
        Party {
            index,
            channel,
            triples: TriplePool { source: triples, block: None, offset: 0 },
            tape: GateTape::default(),
        }
    }

    pub fn index(&self) -> PartyIndex {
        self.index
    }

    pub fn is_first(&self) -> bool {
        self.index == PartyIndex::First
    }

    pub fn tape(&self) -> &GateTape {
        &self.tape
    }

    pub(crate) fn note_compare_exchanges(&mut self, n: u64) {
        self.tape.compare_exchanges += n;
        self.tape.push(TapeOp::CompareExchanges, n);
    }

    /// Shares of a public vector: the first party holds the value, the second zeros.
    pub fn constant(&self, value: &Lanes) -> Lanes {
        if self.is_first() {
            value.clone()
        } else {
            Lanes::zeros(value.len())
        }
    }

    pub fn constant_bits(&self, bit: bool, len: usize) -> Lanes {
        if self.is_first() && bit {
            Lanes::ones(len)
        } else {
            Lanes::zeros(len)
        }
    }

    /// Bit-sliced shares of public `width`-bit values, LSB slice first.
    pub fn constant_word(&self, values: &[u64], width: u32) -> Vec<Lanes> {
        (0..width)
            .map(|b| {
                if self.is_first() {
                    Lanes::from_fn(values.len(), |i| (values[i] >> b) & 1 == 1)
                } else {
                    Lanes::zeros(values.len())
                }
            })
            .collect()
    }

    pub fn not(&self, x: &Lanes) -> Lanes {
        if self.is_first() {
            x.not()
        } else {
            x.clone()
        }
    }

    fn exchange(&mut self, out: &[u8]) -> Result<Vec<u8>> {
        self.tape.rounds += 1;
        self.tape.bytes_sent += out.len() as u64;
        let inbound = self.channel.exchange(out)?;
        if inbound.len() != out.len() {
            return Err(Error::Protocol(format!(
                "peer sent {} bytes in a round where {} were expected",
                inbound.len(),
                out.len()
            )));
        }
        Ok(inbound)
    }

    /// Evaluates every pair's lane-wise AND in one round.
    ///
    /// Each lane consumes one triple `(a, b, c)`; the parties open `d = x ^ a` and
    /// `e = y ^ b`, packed as `d || e` into `ceil(2m / 8)` bytes for `m` lanes.
    pub fn and_many(&mut self, pairs: &[(&Lanes, &Lanes)]) -> Result<Vec<Lanes>> {
        let total: usize = pairs.iter().map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "AND operand length mismatch");
            x.len()
        }).sum();
        if total == 0 {
            return Ok(pairs.iter().map(|_| Lanes::default()).collect());
        }
        let t = self.triples.take(total)?;
        self.tape.and_gates += total as u64;
        self.tape.triple_cursor += total as u64;
        self.tape.push(TapeOp::And, total as u64);

        let x = Lanes::concat(pairs.iter().map(|(x, _)| *x));
        let y = Lanes::concat(pairs.iter().map(|(_, y)| *y));
        let d = x.xor(&t.a);
        let e = y.xor(&t.b);
        let mut msg = d.clone();
        msg.append(&e);
        let inbound = self.exchange(&msg.to_bytes())?;
        let peer = Lanes::from_bytes(&inbound, 2 * total);
        let big_d = d.xor(&peer.extract(0, total));
        let big_e = e.xor(&peer.extract(total, total));
        let mut z = t.c.xor(&big_d.and(&t.b)).xor(&big_e.and(&t.a));
        if self.is_first() {
            z.xor_assign(&big_d.and(&big_e));
        }
        let mut out = Vec::with_capacity(pairs.len());
        let mut at = 0;
        for (x, _) in pairs {
            out.push(z.extract(at, x.len()));
            at += x.len();
        }
        Ok(out)
    }

    pub fn and(&mut self, x: &Lanes, y: &Lanes) -> Result<Lanes> {
        Ok(self.and_many(&[(x, y)])?.pop().expect("one pair in, one result out"))
    }

    /// Opens shared lanes to both parties.
    pub fn reveal(&mut self, x: &Lanes) -> Result<Lanes> {
        self.tape.push(TapeOp::Reveal, x.len() as u64);
        if x.is_empty() {
            return Ok(Lanes::default());
        }
        let inbound = self.exchange(&x.to_bytes())?;
        Ok(x.xor(&Lanes::from_bytes(&inbound, x.len())))
    }

    pub fn close(&mut self) -> Result<()> {
        self.channel.close()
    }

    /// Swaps public bytes of equal length with the peer.
    pub fn exchange_public(&mut self, bytes: &[u8]) -> Result<Vec<u8>> {
        self.tape.push(TapeOp::Exchange, bytes.len() as u64);
        self.exchange(bytes)
    }
}
