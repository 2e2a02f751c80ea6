//! Two-party XOR secret sharing and the triple dealer.
//!
//! A value is split into two shares whose XOR is the value. Either share alone
//! is a uniformly random string. AND gates consume correlated randomness
//! (`c = a & b` over reconstruction) issued by a dealer that takes no part in
//! the computation itself.

use rand::{CryptoRng, RngCore};

use crate::error::{Error, Result};
use crate::oblivious::Lanes;

/// One party's share of a single bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct BitShare(pub bool);

impl std::ops::BitXor for BitShare {
    type Output = BitShare;
    fn bitxor(self, rhs: BitShare) -> BitShare {
        BitShare(self.0 ^ rhs.0)
    }
}

/// One party's share of an unsigned integer of public width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WordShare {
    value: u64,
    width: u32,
}

fn width_mask(width: u32) -> u64 {
    if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn check_width(width: u32) -> Result<()> {
    if width == 0 || width > 64 {
        Err(Error::InvalidWidth(width))
    } else {
        Ok(())
    }
}

impl WordShare {
    pub fn new(value: u64, width: u32) -> Result<Self> {
        check_width(width)?;
        Ok(WordShare { value: value & width_mask(width), width })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn raw(&self) -> u64 {
        self.value
    }

    /// Share of bit `i`, least significant first.
    pub fn bit(&self, i: u32) -> BitShare {
        assert!(i < self.width);
        BitShare((self.value >> i) & 1 == 1)
    }

    pub fn bits(&self) -> impl Iterator<Item = BitShare> + '_ {
        (0..self.width).map(|i| self.bit(i))
    }
}

/// Splits `word` (of `width` bits) into `(r, word ^ r)` with `r` drawn from `rng`.
pub fn split<R: RngCore + CryptoRng>(word: u64, width: u32, rng: &mut R) -> Result<(WordShare, WordShare)> {
    check_width(width)?;
    let mask = width_mask(width);
    let r = rng.next_u64() & mask;
    Ok((WordShare { value: r, width }, WordShare { value: (word & mask) ^ r, width }))
}

pub fn reconstruct(s1: &WordShare, s2: &WordShare) -> Result<u64> {
    if s1.width != s2.width {
        return Err(Error::ShareMismatch(format!("widths {} and {}", s1.width, s2.width)));
    }
    Ok(s1.value ^ s2.value)
}

/// A single AND triple as held by one party.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AndTriple {
    pub a: BitShare,
    pub b: BitShare,
    pub c: BitShare,
}

/// A packed run of triples for one party; lane `i` of `a`, `b`, `c` is triple `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleBlock {
    pub a: Lanes,
    pub b: Lanes,
    pub c: Lanes,
}

impl TripleBlock {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn triple(&self, i: usize) -> AndTriple {
        AndTriple { a: BitShare(self.a.get(i)), b: BitShare(self.b.get(i)), c: BitShare(self.c.get(i)) }
    }

    /// `count(u32 BE) | a | b | c`, each bit string packed into `ceil(count / 8)` bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 3 * self.len().div_ceil(8));
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.a.to_bytes());
        out.extend_from_slice(&self.b.to_bytes());
        out.extend_from_slice(&self.c.to_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Framing("triple block shorter than its header".into()));
        }
        let count = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        let nb = count.div_ceil(8);
        if bytes.len() != 4 + 3 * nb {
            return Err(Error::Framing(format!("triple block of {count} has {} payload bytes", bytes.len() - 4)));
        }
        let body = &bytes[4..];
        Ok(TripleBlock {
            a: Lanes::from_bytes(&body[..nb], count),
            b: Lanes::from_bytes(&body[nb..2 * nb], count),
            c: Lanes::from_bytes(&body[2 * nb..], count),
        })
    }
}

fn random_lanes<R: RngCore>(len: usize, rng: &mut R) -> Lanes {
    let mut words = vec![0u64; len.div_ceil(64)];
    for w in &mut words {
        *w = rng.next_u64();
    }
    Lanes::from_words(words, len)
}

/// Number of triples per dealer block on the wire.
pub const TRIPLE_BLOCK_SIZE: usize = 1 << 16;

/// Deals `count` packed triples: one block per compute party.
pub fn deal_block<R: RngCore + CryptoRng>(count: usize, rng: &mut R) -> Result<(TripleBlock, TripleBlock)> {
    if count == 0 {
        return Err(Error::InvalidArgument("triple count must be at least 1".into()));
    }
    let a1 = random_lanes(count, rng);
    let b1 = random_lanes(count, rng);
    let c1 = random_lanes(count, rng);
    let a2 = random_lanes(count, rng);
    let b2 = random_lanes(count, rng);
    let c2 = a1.xor(&a2).and(&b1.xor(&b2)).xor(&c1);
    Ok((TripleBlock { a: a1, b: b1, c: c1 }, TripleBlock { a: a2, b: b2, c: c2 }))
}

pub fn deal_triples<R: RngCore + CryptoRng>(count: usize, rng: &mut R) -> Result<(Vec<AndTriple>, Vec<AndTriple>)> {
    let (p1, p2) = deal_block(count, rng)?;
    Ok(((0..count).map(|i| p1.triple(i)).collect(), (0..count).map(|i| p2.triple(i)).collect()))
}

/// A record with a fixed bit encoding.
pub trait FixedWidthRow {
    fn width_bits(&self) -> u16;
    /// Writes the row's bits MSB-first into `out`, which holds `ceil(width / 8)` zeroed bytes.
    fn write_bits(&self, out: &mut [u8]);
}

/// Writes `width` low bits of `value` MSB-first at bit offset `pos` of `out`.
pub fn put_bits(out: &mut [u8], pos: &mut usize, value: u64, width: u32) {
    for i in (0..width).rev() {
        if (value >> i) & 1 == 1 {
            out[*pos / 8] |= 0x80 >> (*pos % 8);
        }
        *pos += 1;
    }
}

/// Reads `width` bits MSB-first at bit offset `pos` of `bytes`.
pub fn take_bits(bytes: &[u8], pos: &mut usize, width: u32) -> u64 {
    let mut v = 0u64;
    for _ in 0..width {
        v = (v << 1) | ((bytes[*pos / 8] >> (7 - *pos % 8)) & 1) as u64;
        *pos += 1;
    }
    v
}

pub const SHARE_MAGIC: &[u8; 4] = b"VDFS";
pub const SHARE_VERSION: u16 = 1;
const SHARE_HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8 + 2;

/// One party's share of a table at rest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareFile {
    pub version: u16,
    pub share_index: u8,
    pub table_id: u32,
    pub row_count: u64,
    pub row_width_bits: u16,
    pub payload: Vec<u8>,
}

impl ShareFile {
    pub fn row_bytes(&self) -> usize {
        (self.row_width_bits as usize).div_ceil(8)
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let rb = self.row_bytes();
        &self.payload[i * rb..(i + 1) * rb]
    }

    pub fn encoded_len(&self) -> usize {
        SHARE_HEADER_LEN + self.payload.len()
    }

    /// Little-endian header followed by the packed rows.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(SHARE_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.share_index);
        out.extend_from_slice(&self.table_id.to_le_bytes());
        out.extend_from_slice(&self.row_count.to_le_bytes());
        out.extend_from_slice(&self.row_width_bits.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one file from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(ShareFile, usize)> {
        if bytes.len() < SHARE_HEADER_LEN {
            return Err(Error::ShareFormat(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != SHARE_MAGIC {
            return Err(Error::ShareFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SHARE_VERSION {
            return Err(Error::ShareFormat(format!("unsupported version {version}")));
        }
        let share_index = bytes[6];
        if share_index != 1 && share_index != 2 {
            return Err(Error::ShareFormat(format!("share index {share_index}")));
        }
        let table_id = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
        let row_count = u64::from_le_bytes(bytes[11..19].try_into().unwrap());
        let row_width_bits = u16::from_le_bytes([bytes[19], bytes[20]]);
        let need = (row_count as u128) * (row_width_bits as u128).div_ceil(8);
        let have = (bytes.len() - SHARE_HEADER_LEN) as u128;
        if have < need {
            return Err(Error::ShareFormat(format!("payload holds {have} bytes, header promises {need}")));
        }
        let need = need as usize;
        let payload = bytes[SHARE_HEADER_LEN..SHARE_HEADER_LEN + need].to_vec();
        Ok((ShareFile { version, share_index, table_id, row_count, row_width_bits, payload }, SHARE_HEADER_LEN + need))
    }

    pub fn decode(bytes: &[u8]) -> Result<ShareFile> {
        let (f, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::ShareFormat(format!("{} trailing bytes", bytes.len() - used)));
        }
        Ok(f)
    }

    /// Decodes a concatenation of share files.
    pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<ShareFile>> {
        let mut out = Vec::new();
        while !bytes.is_empty() {
            let (f, used) = Self::decode_prefix(bytes)?;
            out.push(f);
            bytes = &bytes[used..];
        }
        Ok(out)
    }

    pub fn check_payload(&self) -> Result<()> {
        if self.payload.len() as u128 != self.row_count as u128 * self.row_bytes() as u128 {
            return Err(Error::ShareFormat(format!(
                "payload {} bytes for {} rows of {} bits",
                self.payload.len(),
                self.row_count,
                self.row_width_bits
            )));
        }
        Ok(())
    }
}

/// Splits every row into two shares. Row order and public metadata are mirrored.
///
/// `width` is the table's schema width; every row must encode to exactly that many bits.
pub fn share_table<T: FixedWidthRow, R: RngCore + CryptoRng>(
    records: &[T],
    table_id: u32,
    width: u16,
    rng: &mut R,
) -> Result<(ShareFile, ShareFile)> {
    if width == 0 {
        return Err(Error::Schema("row width must be positive".into()));
    }
    let rb = (width as usize).div_ceil(8);
    let mut p1 = vec![0u8; records.len() * rb];
    let mut p2 = vec![0u8; records.len() * rb];
    let pad_mask = if width % 8 == 0 { 0xFF } else { 0xFFu8 << (8 - width % 8) };
    let mut row = vec![0u8; rb];
    for (i, rec) in records.iter().enumerate() {
        if rec.width_bits() != width {
            return Err(Error::Schema(format!("row {i} is {} bits wide, expected {width}", rec.width_bits())));
        }
        row.fill(0);
        rec.write_bits(&mut row);
        let s1 = &mut p1[i * rb..(i + 1) * rb];
        rng.fill_bytes(s1);
        s1[rb - 1] &= pad_mask;
        let s2 = &mut p2[i * rb..(i + 1) * rb];
        for k in 0..rb {
            s2[k] = row[k] ^ s1[k];
        }
    }
    let mk = |share_index, payload| ShareFile {
        version: SHARE_VERSION,
        share_index,
        table_id,
        row_count: records.len() as u64,
        row_width_bits: width,
        payload,
    };
    Ok((mk(1, p1), mk(2, p2)))
}

/// Checks that two share files pair up, returning them ordered by share index.
pub fn pair_shares<'a>(x: &'a ShareFile, y: &'a ShareFile) -> Result<(&'a ShareFile, &'a ShareFile)> {
    if x.table_id != y.table_id {
        return Err(Error::ShareMismatch(format!("table ids {} and {}", x.table_id, y.table_id)));
    }
    if x.row_count != y.row_count {
        return Err(Error::ShareMismatch(format!("row counts {} and {}", x.row_count, y.row_count)));
    }
    if x.row_width_bits != y.row_width_bits {
        return Err(Error::ShareMismatch(format!("row widths {} and {}", x.row_width_bits, y.row_width_bits)));
    }
    match (x.share_index, y.share_index) {
        (1, 2) => Ok((x, y)),
        (2, 1) => Ok((y, x)),
        (a, b) => Err(Error::ShareMismatch(format!("share indices {a} and {b}"))),
    }
}

/// Reconstructs the packed plaintext rows of a share pair.
pub fn reconstruct_rows(x: &ShareFile, y: &ShareFile) -> Result<Vec<Vec<u8>>> {
    let (a, b) = pair_shares(x, y)?;
    a.check_payload()?;
    b.check_payload()?;
    Ok((0..a.row_count as usize)
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(p, q)| p ^ q).collect())
        .collect())
}
