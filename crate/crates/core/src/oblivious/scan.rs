//! Linear scans over tables sorted by a group key.
//!
//! Every scan walks the rows once in order. The work per row is fixed, so the
//! schedule depends only on the row count.

use crate::error::{Error, Result};
use crate::oblivious::circuits::zero_extend;
use crate::oblivious::{Lanes, ObliviousTable, Party, Schema};

/// `same[i] = 1` iff row `i` is real and its key equals row `i - 1`'s. `same[0] = 0`.
pub fn adjacent_equal(party: &mut Party, key: &[Lanes], dummy: &Lanes) -> Result<Lanes> {
    let n = dummy.len();
    if n < 2 {
        return Ok(Lanes::zeros(n));
    }
    let cur: Vec<Lanes> = key.iter().map(|s| s.extract(1, n - 1)).collect();
    let prev: Vec<Lanes> = key.iter().map(|s| s.extract(0, n - 1)).collect();
    let eq = party.equal(&cur, &prev)?;
    let real = party.not(&dummy.extract(1, n - 1));
    let tail = party.and(&eq, &real)?;
    let mut same = Lanes::zeros(1);
    same.append(&tail);
    Ok(same)
}

/// `last[i] = 1` iff row `i` is real and closes its run.
pub fn run_ends(party: &mut Party, same: &Lanes, dummy: &Lanes) -> Result<Lanes> {
    let n = dummy.len();
    if n == 0 {
        return Ok(Lanes::default());
    }
    let mut next_same = same.extract(1, n - 1);
    next_same.push(false);
    let closes = party.not(&next_same);
    let real = party.not(dummy);
    party.and(&closes, &real)
}

/// Bits needed to count up to `n`.
pub fn counter_width(n: usize) -> usize {
    (usize::BITS - n.leading_zeros()).max(1) as usize
}

/// Running per-flag counts that restart whenever `same` is 0.
///
/// Returns one `width`-bit word per flag; lane `i` is the count over the current
/// run up to and including row `i`. Accumulators are only as wide as the row count
/// needs and are zero-extended on output.
pub fn scan_group_sum(party: &mut Party, same: &Lanes, flags: &[Lanes], width: usize) -> Result<Vec<Vec<Lanes>>> {
    let n = same.len();
    let nf = flags.len();
    let w = counter_width(n).min(width);
    let mut out: Vec<Vec<Lanes>> = vec![vec![Lanes::zeros(n); w]; nf];
    let mut acc = Lanes::zeros(nf * w);
    for i in 0..n {
        let keep = Lanes::filled(nf * w, same.get(i));
        let masked = party.and(&keep, &acc)?;
        // carry into bit j is v & masked[0] & ... & masked[j - 1]
        let mut carry = Lanes::from_fn(nf * w, |p| {
            let (f, j) = (p / w, p % w);
            if j == 0 {
                flags[f].get(i)
            } else {
                masked.get(p - 1)
            }
        });
        let mut d = 1;
        while d < w {
            let hi: Vec<usize> = (0..nf * w).filter(|p| p % w >= d).collect();
            let x = Lanes::from_fn(hi.len(), |k| carry.get(hi[k]));
            let y = Lanes::from_fn(hi.len(), |k| carry.get(hi[k] - d));
            let r = party.and(&x, &y)?;
            for (k, &p) in hi.iter().enumerate() {
                carry.set(p, r.get(k));
            }
            d *= 2;
        }
        acc = masked.xor(&carry);
        for f in 0..nf {
            for j in 0..w {
                if acc.get(f * w + j) {
                    out[f][j].set(i, true);
                }
            }
        }
    }
    Ok(out.into_iter().map(|c| zero_extend(&c, width)).collect())
}

/// Running per-flag OR that restarts whenever `same` is 0, plus words carried
/// forward from the first row of each run.
pub fn scan_group_or(
    party: &mut Party,
    same: &Lanes,
    flags: &[Lanes],
    carried: &[Vec<Lanes>],
) -> Result<(Vec<Lanes>, Vec<Vec<Lanes>>)> {
    let n = same.len();
    let nf = flags.len();
    let own = Lanes::concat(carried.iter().flatten());
    let nc = own.len() / n.max(1);
    let own_at = |i: usize| -> Lanes {
        let mut l = Lanes::zeros(nc);
        let mut p = 0;
        for word in carried {
            for s in word {
                l.set(p, s.get(i));
                p += 1;
            }
        }
        l
    };
    let mut or_out = vec![Lanes::zeros(n); nf];
    let mut carry_out: Vec<Vec<Lanes>> = carried.iter().map(|w| vec![Lanes::zeros(n); w.len()]).collect();
    let mut acc = Lanes::zeros(nf);
    let mut held = Lanes::zeros(nc);
    for i in 0..n {
        let s = same.get(i);
        let v = Lanes::from_fn(nf, |f| flags[f].get(i));
        let mine = own_at(i);
        let keep_f = Lanes::filled(nf, s);
        let keep_c = Lanes::filled(nc, s);
        let delta = held.xor(&mine);
        let r = party.and_many(&[(&keep_f, &acc), (&keep_c, &delta)])?;
        held = mine.xor(&r[1]);
        let t = &r[0];
        let vt = party.and(&v, t)?;
        acc = v.xor(t).xor(&vt);
        for f in 0..nf {
            if acc.get(f) {
                or_out[f].set(i, true);
            }
        }
        let mut p = 0;
        for word in carry_out.iter_mut() {
            for s in word.iter_mut() {
                if held.get(p) {
                    s.set(i, true);
                }
                p += 1;
            }
        }
    }
    Ok((or_out, carry_out))
}

/// Width of the per-group sums produced by [`ob_scan_group_agg`].
pub const SUM_WIDTH: usize = 32;

/// Group-by-sum over a table already sorted by `key` with dummies last.
///
/// The output keeps the input cardinality and the key fields, adds a 32-bit
/// `sum_<flag>` field per counted flag, and marks every row dummy except the last
/// row of each run of equal real keys.
pub fn ob_scan_group_agg(party: &mut Party, table: &ObliviousTable, key: &[&str], counted: &[&str]) -> Result<ObliviousTable> {
    let mut key_bits = Vec::new();
    for k in key {
        key_bits.extend_from_slice(table.column(k)?);
    }
    let flags: Vec<Lanes> = counted.iter().map(|c| table.flag(c).cloned()).collect::<Result<_>>()?;
    if key_bits.is_empty() {
        return Err(Error::Schema("group key is empty".into()));
    }
    let same = adjacent_equal(party, &key_bits, table.dummy())?;
    let sums = scan_group_sum(party, &same, &flags, SUM_WIDTH)?;
    let last = run_ends(party, &same, table.dummy())?;

    let mut fields: Vec<(String, u32)> = Vec::new();
    let mut columns = Vec::new();
    for k in key {
        let i = table.schema().index_of(k)?;
        fields.push((k.to_string(), table.schema().fields()[i].width));
        columns.push(table.columns()[i].clone());
    }
    for (c, s) in counted.iter().zip(sums) {
        fields.push((format!("sum_{c}"), SUM_WIDTH as u32));
        columns.push(s);
    }
    let spec: Vec<(&str, u32)> = fields.iter().map(|(n, w)| (n.as_str(), *w)).collect();
    ObliviousTable::new(Schema::new(&spec), columns, party.not(&last))
}
