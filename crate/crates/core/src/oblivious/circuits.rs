//! Boolean circuits over bit-sliced shares.
//!
//! A word is a slice of [`Lanes`], least significant bit first; lane `i` of every
//! slice belongs to element `i`. Gate counts and round counts of every circuit
//! here depend only on the word width and lane count.

use crate::error::{Error, Result};
use crate::oblivious::{Lanes, Party};

fn check_widths(x: &[Lanes], y: &[Lanes]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShareMismatch(format!("word widths {} and {}", x.len(), y.len())));
    }
    Ok(())
}

/// Plaintext values to bit slices.
pub fn slices_from_values(values: &[u64], width: u32) -> Vec<Lanes> {
    (0..width).map(|b| Lanes::from_fn(values.len(), |i| (values[i] >> b) & 1 == 1)).collect()
}

/// Bit slices back to plaintext values.
pub fn values_from_slices(slices: &[Lanes]) -> Vec<u64> {
    let n = slices.first().map_or(0, |s| s.len());
    (0..n)
        .map(|i| slices.iter().enumerate().fold(0u64, |acc, (b, s)| acc | ((s.get(i) as u64) << b)))
        .collect()
}

pub fn xor_slices(x: &[Lanes], y: &[Lanes]) -> Vec<Lanes> {
    x.iter().zip(y).map(|(a, b)| a.xor(b)).collect()
}

/// Concatenates words lane-wise: the result has the lanes of `parts[0]`, then `parts[1]`, ...
pub fn concat_slices(parts: &[&[Lanes]]) -> Vec<Lanes> {
    let width = parts.first().map_or(0, |p| p.len());
    (0..width).map(|b| Lanes::concat(parts.iter().map(|p| &p[b]))).collect()
}

pub fn extract_slices(x: &[Lanes], start: usize, len: usize) -> Vec<Lanes> {
    x.iter().map(|s| s.extract(start, len)).collect()
}

/// Picks lanes by public index.
pub fn gather_slices(x: &[Lanes], indices: &[usize]) -> Vec<Lanes> {
    x.iter().map(|s| Lanes::from_fn(indices.len(), |i| s.get(indices[i]))).collect()
}

/// Zero-extends a word to `width` bits. Zero shares are valid for both parties.
pub fn zero_extend(x: &[Lanes], width: usize) -> Vec<Lanes> {
    let n = x.first().map_or(0, |s| s.len());
    let mut out = x.to_vec();
    out.resize(width, Lanes::zeros(n));
    out
}

impl Party {
    /// Pairwise AND of two equally shaped words in one round.
    pub fn and_slices(&mut self, x: &[Lanes], y: &[Lanes]) -> Result<Vec<Lanes>> {
        check_widths(x, y)?;
        let pairs: Vec<(&Lanes, &Lanes)> = x.iter().zip(y).collect();
        self.and_many(&pairs)
    }

    pub fn or(&mut self, x: &Lanes, y: &Lanes) -> Result<Lanes> {
        let a = self.and(x, y)?;
        Ok(x.xor(y).xor(&a))
    }

    /// `t` where `cond` is set, `f` elsewhere. Exactly one AND per bit per lane.
    pub fn mux(&mut self, cond: &Lanes, t: &[Lanes], f: &[Lanes]) -> Result<Vec<Lanes>> {
        check_widths(t, f)?;
        let diff: Vec<Lanes> = t.iter().zip(f).map(|(a, b)| a.xor(b)).collect();
        let pairs: Vec<(&Lanes, &Lanes)> = diff.iter().map(|d| (cond, d)).collect();
        let sel = self.and_many(&pairs)?;
        Ok(f.iter().zip(&sel).map(|(b, s)| b.xor(s)).collect())
    }

    /// Unsigned `x < y`, combined over a balanced tree of bit positions.
    pub fn less_than(&mut self, x: &[Lanes], y: &[Lanes]) -> Result<Lanes> {
        check_widths(x, y)?;
        if x.is_empty() {
            return Err(Error::InvalidWidth(0));
        }
        let not_x: Vec<Lanes> = x.iter().map(|b| self.not(b)).collect();
        let mut lt = self.and_slices(&not_x, y)?;
        let mut eq: Vec<Lanes> = x.iter().zip(y).map(|(a, b)| self.not(&a.xor(b))).collect();
        while lt.len() > 1 {
            let pairs = lt.len() / 2;
            let last_level = lt.len() == 2;
            let mut ops: Vec<(&Lanes, &Lanes)> = Vec::with_capacity(2 * pairs);
            for p in 0..pairs {
                ops.push((&eq[2 * p + 1], &lt[2 * p]));
            }
            if !last_level {
                for p in 0..pairs {
                    ops.push((&eq[2 * p + 1], &eq[2 * p]));
                }
            }
            let res = self.and_many(&ops)?;
            let mut next_lt = Vec::with_capacity(pairs + 1);
            let mut next_eq = Vec::with_capacity(pairs + 1);
            for p in 0..pairs {
                next_lt.push(lt[2 * p + 1].xor(&res[p]));
                if !last_level {
                    next_eq.push(res[pairs + p].clone());
                }
            }
            if lt.len() % 2 == 1 {
                next_lt.push(lt.last().expect("odd length").clone());
                next_eq.push(eq.last().expect("odd length").clone());
            }
            lt = next_lt;
            eq = next_eq;
        }
        Ok(lt.pop().expect("at least one bit"))
    }

    pub fn equal(&mut self, x: &[Lanes], y: &[Lanes]) -> Result<Lanes> {
        check_widths(x, y)?;
        if x.is_empty() {
            return Err(Error::InvalidWidth(0));
        }
        let bits: Vec<Lanes> = x.iter().zip(y).map(|(a, b)| self.not(&a.xor(b))).collect();
        self.and_reduce(bits)
    }

    /// AND of all slices, as a balanced tree.
    pub fn and_reduce(&mut self, mut bits: Vec<Lanes>) -> Result<Lanes> {
        assert!(!bits.is_empty());
        while bits.len() > 1 {
            let pairs: Vec<(&Lanes, &Lanes)> = bits.chunks_exact(2).map(|c| (&c[0], &c[1])).collect();
            let mut next = self.and_many(&pairs)?;
            if bits.len() % 2 == 1 {
                next.push(bits.pop().expect("odd length"));
            }
            bits = next;
        }
        Ok(bits.pop().expect("non-empty"))
    }

    pub fn or_reduce(&mut self, bits: Vec<Lanes>) -> Result<Lanes> {
        let inv: Vec<Lanes> = bits.iter().map(|b| self.not(b)).collect();
        let all_zero = self.and_reduce(inv)?;
        Ok(self.not(&all_zero))
    }

    /// `(x + y) mod 2^k` with a ripple-carry adder: `k - 1` ANDs and rounds.
    pub fn add(&mut self, x: &[Lanes], y: &[Lanes]) -> Result<Vec<Lanes>> {
        check_widths(x, y)?;
        let n = x.first().map_or(0, |s| s.len());
        let mut carry = Lanes::zeros(n);
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            out.push(x[i].xor(&y[i]).xor(&carry));
            if i + 1 < x.len() {
                let xc = x[i].xor(&carry);
                let yc = y[i].xor(&carry);
                let m = self.and(&xc, &yc)?;
                carry = m.xor(&carry);
            }
        }
        Ok(out)
    }

    /// Inclusive prefix AND over a list of slices: `out[j] = items[0] & ... & items[j]`.
    pub fn prefix_and(&mut self, items: Vec<Lanes>) -> Result<Vec<Lanes>> {
        let mut cur = items;
        let mut d = 1;
        while d < cur.len() {
            let pairs: Vec<(&Lanes, &Lanes)> = (d..cur.len()).map(|j| (&cur[j], &cur[j - d])).collect();
            let res = self.and_many(&pairs)?;
            for (k, r) in res.into_iter().enumerate() {
                cur[d + k] = r;
            }
            d *= 2;
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oblivious::local::run_local_pair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Shares plaintext values for both parties from a fixed seed.
    fn share_values(values: &[u64], width: u32, seed: u64, first: bool) -> Vec<Lanes> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mask: Vec<u64> = values.iter().map(|_| rng.gen::<u64>()).collect();
        let shown: Vec<u64> = if first { mask } else { values.iter().zip(&mask).map(|(v, m)| v ^ m).collect() };
        slices_from_values(&shown, width)
    }

    fn open(a: &[Lanes], b: &[Lanes]) -> Vec<u64> {
        values_from_slices(&xor_slices(a, b))
    }

    #[test]
    fn mux_selects() {
        let (a, b) = run_local_pair(1, |p| {
            let first = p.is_first();
            // cond opens to [1, 0, 0]
            let c = if first {
                Lanes::from_bools(&[true, false, true])
            } else {
                Lanes::from_bools(&[false, false, true])
            };
            let t = share_values(&[7, 7, 5], 8, 2, first);
            let f = share_values(&[3, 3, 5], 8, 3, first);
            p.mux(&c, &t, &f)
        })
        .unwrap();
        assert_eq!(open(&a, &b), vec![7, 3, 5]);
    }

    #[test]
    fn xor_is_free() {
        let (t1, _) = run_local_pair(1, |p| {
            let x = p.constant_bits(true, 10);
            let before = p.tape().clone();
            let _ = x.xor(&x);
            let _ = p.not(&x);
            Ok(before == *p.tape())
        })
        .unwrap();
        assert!(t1);
    }

    #[test]
    fn and_truth_table() {
        let xs = [0u64, 0, 1, 1];
        let ys = [0u64, 1, 0, 1];
        let (a, b) = run_local_pair(5, |p| {
            let first = p.is_first();
            let x = share_values(&xs, 1, 10, first);
            let y = share_values(&ys, 1, 11, first);
            Ok(vec![p.and(&x[0], &y[0])?])
        })
        .unwrap();
        assert_eq!(open(&a, &b), vec![0, 0, 0, 1]);
    }

    #[test]
    fn and_batch_payload_size() {
        for m in [1usize, 3, 4, 7, 100, 1001] {
            let (t, _) = run_local_pair(5, |p| {
                let x = Lanes::zeros(m);
                p.and(&x, &x)?;
                Ok(p.tape().bytes_sent)
            })
            .unwrap();
            assert_eq!(t, (2 * m).div_ceil(8) as u64, "m={m}");
        }
    }

    #[test]
    fn exhaustive_width_six() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for x in 0..64u64 {
            for y in 0..64u64 {
                xs.push(x);
                ys.push(y);
            }
        }
        let (a, b) = run_local_pair(9, |p| {
            let first = p.is_first();
            let x = share_values(&xs, 6, 20, first);
            let y = share_values(&ys, 6, 21, first);
            let lt = p.less_than(&x, &y)?;
            let eq = p.equal(&x, &y)?;
            let sum = p.add(&x, &y)?;
            Ok((lt, eq, sum))
        })
        .unwrap();
        let lt = a.0.xor(&b.0);
        let eq = a.1.xor(&b.1);
        let sum = open(&a.2, &b.2);
        for i in 0..xs.len() {
            assert_eq!(lt.get(i), xs[i] < ys[i]);
            assert_eq!(eq.get(i), xs[i] == ys[i]);
            assert_eq!(sum[i], (xs[i] + ys[i]) % 64);
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let (r, _) = run_local_pair(1, |p| {
            let x = vec![Lanes::zeros(1); 3];
            let y = vec![Lanes::zeros(1); 4];
            Ok(p.less_than(&x, &y).is_err() && p.mux(&x[0].clone(), &x, &y).is_err())
        })
        .unwrap();
        assert!(r);
    }

    #[test]
    fn prefix_and_matches_plain() {
        let vals: Vec<u64> = (0..32).map(|i| (i * 37 + 5) % 64).collect();
        let (a, b) = run_local_pair(2, |p| {
            let first = p.is_first();
            let x = share_values(&vals, 9, 30, first);
            p.prefix_and(x)
        })
        .unwrap();
        let got = open(&a, &b);
        for (i, v) in vals.iter().enumerate() {
            let mut acc = true;
            let mut want = 0u64;
            for j in 0..9 {
                acc &= (v >> j) & 1 == 1;
                want |= (acc as u64) << j;
            }
            assert_eq!(got[i], want);
        }
    }
}
