//! Bitonic sorting network over oblivious tables.

use crate::error::Result;
use crate::oblivious::{Lanes, ObliviousTable, Party};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortKey {
    pub field: String,
    pub ascending: bool,
}

impl SortKey {
    pub fn asc(field: &str) -> Self {
        SortKey { field: field.to_string(), ascending: true }
    }

    pub fn desc(field: &str) -> Self {
        SortKey { field: field.to_string(), ascending: false }
    }
}

/// Compare-exchanges performed by a bitonic network on `n = 2^k` inputs: `n k (k + 1) / 4`.
pub fn network_size(n: usize) -> u64 {
    if n < 2 {
        return 0;
    }
    let k = n.trailing_zeros() as u64;
    n as u64 * k * (k + 1) / 4
}

/// Comparison key of every row, least significant bit first, with the dummy bit on top.
fn comparison_key(columns: &[Vec<Lanes>], dummy: &Lanes, key: &[(usize, bool)], party: &Party) -> Vec<Lanes> {
    let mut out = Vec::new();
    for &(idx, ascending) in key.iter().rev() {
        for s in &columns[idx] {
            out.push(if ascending { s.clone() } else { party.not(s) });
        }
    }
    out.push(dummy.clone());
    out
}

/// Sorts rows by `key` with dummies after every real row.
///
/// The table is padded to the next power of two with dummy rows whose fields are
/// all ones, run through the network, and cut back to its original length. The
/// comparator schedule depends only on the padded length. Not stable.
pub fn bitonic_sort(party: &mut Party, table: &ObliviousTable, key: &[SortKey]) -> Result<ObliviousTable> {
    let key_idx: Vec<(usize, bool)> = key
        .iter()
        .map(|k| Ok((table.schema().index_of(&k.field)?, k.ascending)))
        .collect::<Result<_>>()?;
    let n = table.len();
    if n < 2 {
        return Ok(table.clone());
    }
    let padded = n.next_power_of_two();
    let mut work = table.clone();
    let first = party.is_first();
    work.push_constant_rows(padded - n, first, |f| if f.width == 64 { u64::MAX } else { (1u64 << f.width) - 1 }, true);

    let schema = work.schema().clone();
    let mut columns: Vec<Vec<Lanes>> = work.columns().to_vec();
    let mut dummy = work.dummy().clone();

    let mut size = 2;
    while size <= padded {
        let mut stride = size / 2;
        while stride >= 1 {
            let descending = Lanes::from_fn(padded, |i| i & size != 0).split_stride(stride).0;
            let mut lo_cols = Vec::with_capacity(columns.len());
            let mut hi_cols = Vec::with_capacity(columns.len());
            for col in &columns {
                let (l, h): (Vec<Lanes>, Vec<Lanes>) = col.iter().map(|s| s.split_stride(stride)).unzip();
                lo_cols.push(l);
                hi_cols.push(h);
            }
            let (lo_dummy, hi_dummy) = dummy.split_stride(stride);

            let lo_key = comparison_key(&lo_cols, &lo_dummy, &key_idx, party);
            let hi_key = comparison_key(&hi_cols, &hi_dummy, &key_idx, party);
            // Ascending pairs swap when hi < lo, descending pairs when lo < hi.
            let x: Vec<Lanes> = lo_key.iter().zip(&hi_key).map(|(l, h)| Lanes::select(&descending, l, h)).collect();
            let y: Vec<Lanes> = lo_key.iter().zip(&hi_key).map(|(l, h)| Lanes::select(&descending, h, l)).collect();
            let swap = party.less_than(&x, &y)?;

            let mut diffs: Vec<Lanes> = Vec::new();
            for (l, h) in lo_cols.iter().zip(&hi_cols) {
                for (a, b) in l.iter().zip(h) {
                    diffs.push(a.xor(b));
                }
            }
            diffs.push(lo_dummy.xor(&hi_dummy));
            let pairs: Vec<(&Lanes, &Lanes)> = diffs.iter().map(|d| (&swap, d)).collect();
            let masks = party.and_many(&pairs)?;
            party.note_compare_exchanges((padded / 2) as u64);

            let mut m = masks.iter();
            for (c, (l, h)) in columns.iter_mut().zip(lo_cols.iter_mut().zip(hi_cols.iter_mut())) {
                for (slot, (a, b)) in c.iter_mut().zip(l.iter_mut().zip(h.iter_mut())) {
                    let t = m.next().expect("one mask per slice");
                    a.xor_assign(t);
                    b.xor_assign(t);
                    *slot = Lanes::merge_stride(a, b, stride);
                }
            }
            let t = m.next().expect("dummy mask");
            dummy = Lanes::merge_stride(&lo_dummy.xor(t), &hi_dummy.xor(t), stride);
            stride /= 2;
        }
        size *= 2;
    }

    let sorted = ObliviousTable::new(schema, columns, dummy)?;
    Ok(sorted.extract_rows(0, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oblivious::local::{open_table, run_local_pair, share_plain_table, PlainRow};
    use crate::oblivious::Schema;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn sort_plain(schema: &Schema, rows: &[PlainRow], key: &[SortKey], seed: u64) -> (Vec<PlainRow>, u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (t1, t2) = share_plain_table(schema, rows, &mut rng).unwrap();
        let (a, b) = run_local_pair(seed, |p| {
            let t = if p.is_first() { &t1 } else { &t2 };
            let out = bitonic_sort(p, t, key)?;
            Ok((out, p.tape().compare_exchanges))
        })
        .unwrap();
        (open_table(&a.0, &b.0), a.1)
    }

    #[test]
    fn sorts_small_example() {
        let schema = Schema::new(&[("k", 4)]);
        let rows: Vec<PlainRow> = [3u64, 1, 2, 0].iter().map(|&k| (vec![k], false)).collect();
        let (out, _) = sort_plain(&schema, &rows, &[SortKey::asc("k")], 1);
        assert_eq!(out.iter().map(|r| r.0[0]).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn eight_rows_take_24_compare_exchanges() {
        let schema = Schema::new(&[("k", 3)]);
        let rows: Vec<PlainRow> = (0..8u64).rev().map(|k| (vec![k], false)).collect();
        let (out, ces) = sort_plain(&schema, &rows, &[SortKey::asc("k")], 2);
        assert_eq!(ces, 24);
        assert_eq!(network_size(8), 24);
        assert!(out.windows(2).all(|w| w[0].0[0] <= w[1].0[0]));
    }

    #[test]
    fn descending_and_compound_keys() {
        let schema = Schema::new(&[("a", 2), ("b", 5), ("payload", 7)]);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let rows: Vec<PlainRow> =
            (0..37).map(|_| (vec![rng.gen_range(0..4), rng.gen_range(0..32), rng.gen_range(0..128)], rng.gen_bool(0.2))).collect();
        let key = [SortKey::asc("a"), SortKey::desc("b")];
        let (out, _) = sort_plain(&schema, &rows, &key, 3);
        assert_eq!(out.len(), rows.len());
        let real = rows.iter().filter(|r| !r.1).count();
        assert!(out[..real].iter().all(|r| !r.1));
        assert!(out[real..].iter().all(|r| r.1));
        for w in out[..real].windows(2) {
            let ka = (w[0].0[0], std::cmp::Reverse(w[0].0[1]));
            let kb = (w[1].0[0], std::cmp::Reverse(w[1].0[1]));
            assert!(ka <= kb);
        }
        let mut want: Vec<_> = rows.iter().filter(|r| !r.1).map(|r| r.0.clone()).collect();
        let mut got: Vec<_> = out[..real].iter().map(|r| r.0.clone()).collect();
        want.sort();
        got.sort();
        assert_eq!(want, got);
    }

    #[test]
    fn random_tables_match_plaintext_sort() {
        let schema = Schema::new(&[("k", 10), ("v", 20)]);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for trial in 0..100 {
            let rows: Vec<PlainRow> = (0..64).map(|_| (vec![rng.gen_range(0..1024), rng.gen_range(0..1 << 20)], false)).collect();
            let (out, _) = sort_plain(&schema, &rows, &[SortKey::asc("k")], trial);
            assert!(out.windows(2).all(|w| w[0].0[0] <= w[1].0[0]));
            let mut want: Vec<_> = rows.iter().map(|r| r.0.clone()).collect();
            let mut got: Vec<_> = out.iter().map(|r| r.0.clone()).collect();
            want.sort();
            got.sort();
            assert_eq!(want, got);
        }
    }

    #[test]
    fn unknown_key_field_is_rejected() {
        let schema = Schema::new(&[("k", 3)]);
        let rows: Vec<PlainRow> = vec![(vec![1], false), (vec![0], false)];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (t1, t2) = share_plain_table(&schema, &rows, &mut rng).unwrap();
        let (a, b) = run_local_pair(1, |p| {
            let t = if p.is_first() { &t1 } else { &t2 };
            Ok(bitonic_sort(p, t, &[SortKey::asc("nope")]).is_err())
        })
        .unwrap();
        assert!(a && b);
    }
}
