//! Packed bit vectors.
//!
//! A [`Lanes`] value holds one party's shares of many independent bits, packed
//! 64 to a word. Every circuit in this crate is evaluated bit-sliced: a gate is
//! applied lane-wise to whole vectors, so one AND round covers every gate at the
//! same depth across all rows.
//!
//! Bits at positions `>= len` are always zero.

const STRIDE_MASKS: [u64; 6] = [
    0x5555_5555_5555_5555,
    0x3333_3333_3333_3333,
    0x0F0F_0F0F_0F0F_0F0F,
    0x00FF_00FF_00FF_00FF,
    0x0000_FFFF_0000_FFFF,
    0x0000_0000_FFFF_FFFF,
];

/// Gathers the bits of `x` selected by `STRIDE_MASKS[t]` into the low 32 bits.
#[inline]
fn compress(x: u64, t: usize) -> u64 {
    let mut x = x & STRIDE_MASKS[t];
    for s in t..5 {
        x = (x | (x >> (1u32 << s))) & STRIDE_MASKS[s + 1];
    }
    x
}

/// Inverse of [`compress`].
#[inline]
fn expand(x: u64, t: usize) -> u64 {
    let mut x = x & STRIDE_MASKS[5];
    for s in (t..5).rev() {
        x = (x | (x << (1u32 << s))) & STRIDE_MASKS[s];
    }
    x
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Lanes {
    words: Vec<u64>,
    len: usize,
}

impl std::fmt::Debug for Lanes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Lanes[{}](", self.len)?;
        for i in 0..self.len.min(128) {
            write!(f, "{}", self.get(i) as u8)?;
        }
        if self.len > 128 {
            write!(f, "...")?;
        }
        write!(f, ")")
    }
}

impl Lanes {
    pub fn zeros(len: usize) -> Self {
        Lanes { words: vec![0; words_for(len)], len }
    }

    pub fn ones(len: usize) -> Self {
        Self::filled(len, true)
    }

    pub fn filled(len: usize, bit: bool) -> Self {
        let mut l = Lanes { words: vec![if bit { u64::MAX } else { 0 }; words_for(len)], len };
        l.clear_tail();
        l
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut l = Self::zeros(len);
        for i in 0..len {
            if f(i) {
                l.words[i / 64] |= 1 << (i % 64);
            }
        }
        l
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |i| bits[i])
    }

    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.resize(words_for(len), 0);
        let mut l = Lanes { words, len };
        l.clear_tail();
        l
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        debug_assert!(i < self.len);
        let m = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }

    pub fn xor(&self, other: &Lanes) -> Lanes {
        assert_eq!(self.len, other.len, "lane length mismatch");
        Lanes {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        }
    }

    pub fn xor_assign(&mut self, other: &Lanes) {
        assert_eq!(self.len, other.len, "lane length mismatch");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    /// Lane-wise AND of two locally known vectors. Not a secure gate.
    pub fn and(&self, other: &Lanes) -> Lanes {
        assert_eq!(self.len, other.len, "lane length mismatch");
        Lanes {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        }
    }

    pub fn not(&self) -> Lanes {
        let mut l = Lanes { words: self.words.iter().map(|w| !w).collect(), len: self.len };
        l.clear_tail();
        l
    }

    /// Picks `a` where `mask` is set and `b` elsewhere. All three are local values.
    pub fn select(mask: &Lanes, a: &Lanes, b: &Lanes) -> Lanes {
        assert!(mask.len == a.len && a.len == b.len, "lane length mismatch");
        Lanes {
            words: mask
                .words
                .iter()
                .zip(a.words.iter().zip(&b.words))
                .map(|(m, (x, y))| (x & m) | (y & !m))
                .collect(),
            len: a.len,
        }
    }

    pub fn extract(&self, start: usize, len: usize) -> Lanes {
        assert!(start + len <= self.len, "extract out of range");
        let wo = start / 64;
        let bo = start % 64;
        let nw = words_for(len);
        let mut words = Vec::with_capacity(nw);
        for k in 0..nw {
            let mut w = self.words[wo + k] >> bo;
            if bo > 0 && wo + k + 1 < self.words.len() {
                w |= self.words[wo + k + 1] << (64 - bo);
            }
            words.push(w);
        }
        let mut l = Lanes { words, len };
        l.clear_tail();
        l
    }

    pub fn append(&mut self, other: &Lanes) {
        let bo = self.len % 64;
        if bo == 0 {
            self.words.extend_from_slice(&other.words);
        } else {
            for &w in &other.words {
                *self.words.last_mut().expect("non-empty when bo > 0") |= w << bo;
                self.words.push(w >> (64 - bo));
            }
        }
        self.len += other.len;
        self.words.truncate(words_for(self.len));
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, bit);
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Lanes>) -> Lanes {
        let mut out = Lanes::default();
        for p in parts {
            out.append(p);
        }
        out
    }

    /// Repeats every lane `times` times in place: `[a, b]` becomes `[a, a, b, b]` for 2.
    pub fn spread(&self, times: usize) -> Lanes {
        Lanes::from_fn(self.len * times, |i| self.get(i / times))
    }

    /// Packs lanes LSB-first into `ceil(len / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len.div_ceil(8));
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Lanes {
        assert!(bytes.len() * 8 >= len, "not enough bytes for {len} lanes");
        let mut words = Vec::with_capacity(words_for(len));
        for chunk in bytes[..len.div_ceil(8)].chunks(8) {
            let mut b = [0u8; 8];
            b[..chunk.len()].copy_from_slice(chunk);
            words.push(u64::from_le_bytes(b));
        }
        Lanes::from_words(words, len)
    }

    /// Splits a vector of power-of-two length into the lanes whose index has bit
    /// `stride` clear and their partners at `index + stride`, each in index order.
    pub fn split_stride(&self, stride: usize) -> (Lanes, Lanes) {
        assert!(stride.is_power_of_two() && self.len % (2 * stride) == 0);
        let half = self.len / 2;
        if stride >= 64 {
            let sw = stride / 64;
            let mut lo = Vec::with_capacity(self.words.len() / 2);
            let mut hi = Vec::with_capacity(self.words.len() / 2);
            for w in 0..self.words.len() {
                if w & sw == 0 {
                    lo.push(self.words[w]);
                    hi.push(self.words[w + sw]);
                }
            }
            return (Lanes { words: lo, len: half }, Lanes { words: hi, len: half });
        }
        let t = stride.trailing_zeros() as usize;
        let mut lo = vec![0u64; words_for(half)];
        let mut hi = vec![0u64; words_for(half)];
        for (w, &x) in self.words.iter().enumerate() {
            let shift = 32 * (w % 2);
            lo[w / 2] |= compress(x, t) << shift;
            hi[w / 2] |= compress(x >> stride, t) << shift;
        }
        (Lanes { words: lo, len: half }, Lanes { words: hi, len: half })
    }

    /// Inverse of [`Lanes::split_stride`].
    pub fn merge_stride(lo: &Lanes, hi: &Lanes, stride: usize) -> Lanes {
        assert_eq!(lo.len, hi.len);
        let len = lo.len * 2;
        assert!(stride.is_power_of_two() && len % (2 * stride) == 0);
        if stride >= 64 {
            let sw = stride / 64;
            let mut words = vec![0u64; words_for(len)];
            let mut k = 0;
            for w in 0..words.len() {
                if w & sw == 0 {
                    words[w] = lo.words[k];
                    words[w + sw] = hi.words[k];
                    k += 1;
                }
            }
            return Lanes { words, len };
        }
        let t = stride.trailing_zeros() as usize;
        let mut words = vec![0u64; words_for(len)];
        for (w, out) in words.iter_mut().enumerate() {
            let shift = 32 * (w % 2);
            let l = lo.words[w / 2] >> shift;
            let h = hi.words[w / 2] >> shift;
            *out = expand(l, t) | (expand(h, t) << stride);
        }
        let mut l = Lanes { words, len };
        l.clear_tail();
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_split(v: &[bool], stride: usize) -> (Vec<bool>, Vec<bool>) {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for i in 0..v.len() {
            if i & stride == 0 {
                lo.push(v[i]);
                hi.push(v[i + stride]);
            }
        }
        (lo, hi)
    }

    #[test]
    fn split_matches_index_pairs_for_every_stride() {
        for log_n in 1..=9 {
            let n = 1usize << log_n;
            let bits: Vec<bool> = (0..n).map(|i| (i * 7 + i / 3) % 5 < 2).collect();
            let l = Lanes::from_bools(&bits);
            let mut stride = 1;
            while stride < n {
                let (lo, hi) = l.split_stride(stride);
                let (elo, ehi) = naive_split(&bits, stride);
                assert_eq!(lo.iter().collect::<Vec<_>>(), elo, "n={n} stride={stride}");
                assert_eq!(hi.iter().collect::<Vec<_>>(), ehi, "n={n} stride={stride}");
                assert_eq!(Lanes::merge_stride(&lo, &hi, stride), l);
                stride *= 2;
            }
        }
    }

    #[test]
    fn not_keeps_tail_clear() {
        let l = Lanes::zeros(70).not();
        assert_eq!(l.count_ones(), 70);
        assert_eq!(l.words()[1], (1 << 6) - 1);
    }

    #[test]
    fn byte_packing_is_tight() {
        let l = Lanes::from_fn(13, |i| i % 3 == 0);
        let b = l.to_bytes();
        assert_eq!(b.len(), 2);
        assert_eq!(Lanes::from_bytes(&b, 13), l);
    }

    proptest! {
        #[test]
        fn extract_and_append_agree(bits in proptest::collection::vec(any::<bool>(), 0..300), cut in 0usize..300) {
            let cut = cut.min(bits.len());
            let l = Lanes::from_bools(&bits);
            let mut a = l.extract(0, cut);
            let b = l.extract(cut, bits.len() - cut);
            prop_assert_eq!(b.iter().collect::<Vec<_>>(), bits[cut..].to_vec());
            a.append(&b);
            prop_assert_eq!(a, l);
        }
    }
}
