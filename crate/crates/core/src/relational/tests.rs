use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::oblivious::local::{open_table, run_local_pair, share_plain_table, PlainRow};
use crate::sharing::pair_shares;

/// token, year, age, sex, race, ethnicity, denominator, numerator, excluded, multi_site
type Rec = [u64; 10];

fn rows_of(recs: &[Rec], dummy: &[bool]) -> Vec<PlainRow> {
    recs.iter().zip(dummy).map(|(r, &d)| (r.to_vec(), d)).collect()
}

fn run_records<T: Send>(
    recs: &[Rec],
    dummy: &[bool],
    seed: u64,
    f: impl Fn(&mut Party, &ObliviousTable) -> Result<T> + Sync,
) -> (T, T) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (t1, t2) = share_plain_table(&record_schema(), &rows_of(recs, dummy), &mut rng).unwrap();
    run_local_pair(seed, |p| {
        let t = if p.is_first() { &t1 } else { &t2 };
        f(p, t)
    })
    .unwrap()
}

fn open_cube(a: &DenseCube, b: &DenseCube) -> Vec<[u64; 4]> {
    let cols: Vec<Vec<u64>> = (0..4).map(|k| open_counters(a.counter(k), b.counter(k))).collect();
    (0..a.domain().size()).map(|i| [cols[0][i], cols[1][i], cols[2][i], cols[3][i]]).collect()
}

fn random_strata(rng: &mut ChaCha20Rng, years: u64) -> [u64; 5] {
    [
        rng.gen_range(0..years),
        rng.gen_range(0..AGE_BANDS as u64),
        rng.gen_range(0..SEXES as u64),
        rng.gen_range(0..RACES as u64),
        rng.gen_range(0..ETHNICITIES as u64),
    ]
}

/// Plaintext cube over survivor rows: (numerator, denominator, both with multi_site).
fn plain_cube(recs: &[Rec], dummy: &[bool]) -> BTreeMap<[u64; 5], [u64; 4]> {
    let mut out: BTreeMap<[u64; 5], [u64; 4]> = BTreeMap::new();
    for (r, &d) in recs.iter().zip(dummy) {
        if d {
            continue;
        }
        let e = out.entry([r[1], r[2], r[3], r[4], r[5]]).or_default();
        e[0] += r[7];
        e[1] += r[6];
        e[2] += r[7] & r[9];
        e[3] += r[6] & r[9];
    }
    out
}

#[test]
fn exclusion_turns_rows_into_dummies() {
    let recs: Vec<Rec> = vec![[1, 0, 0, 0, 0, 0, 1, 1, 1, 0], [2, 0, 0, 0, 0, 0, 1, 0, 0, 0], [3, 0, 0, 0, 0, 0, 0, 0, 0, 0]];
    let (a, b) = run_records(&recs, &[false, false, true], 1, |p, t| apply_exclusion(p, t));
    let out = open_table(&a, &b);
    assert_eq!(out.iter().map(|r| r.1).collect::<Vec<_>>(), vec![true, false, true]);
    assert_eq!(out.iter().map(|r| r.0.clone()).collect::<Vec<_>>(), recs.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
}

#[test]
fn exclusion_schedule_ignores_how_many_rows_are_excluded() {
    let none: Vec<Rec> = (0..16).map(|i| [i, 0, 1, 1, 1, 1, 1, 0, 0, 0]).collect();
    let all: Vec<Rec> = (0..16).map(|i| [i + 100, 1, 2, 0, 3, 2, 0, 0, 1, 1]).collect();
    let d = vec![false; 16];
    let (x, _) = run_records(&none, &d, 2, |p, t| apply_exclusion(p, t).map(|_| p.tape().clone()));
    let (y, _) = run_records(&all, &d, 3, |p, t| apply_exclusion(p, t).map(|_| p.tape().clone()));
    assert_eq!(x, y);
}

#[test]
fn cross_site_exclusion_removes_every_copy() {
    let recs: Vec<Rec> = vec![
        [7, 1, 2, 0, 4, 1, 1, 1, 0, 1],
        [7, 1, 2, 0, 4, 1, 1, 0, 1, 1],
        [9, 1, 2, 0, 4, 1, 1, 0, 0, 0],
    ];
    let (a, b) = run_records(&recs, &[false; 3], 4, |p, t| dedup_patients(p, t));
    let out = open_table(&a, &b);
    let live: Vec<_> = out.iter().filter(|r| !r.1).collect();
    assert_eq!(live.len(), 1);
    assert_eq!(live[0].0[0], 9);
}

#[test]
fn dedup_ors_numerator_across_sites() {
    let recs: Vec<Rec> = vec![[5, 0, 3, 1, 2, 0, 1, 1, 0, 1], [5, 0, 3, 1, 2, 0, 1, 0, 0, 1]];
    let (a, b) = run_records(&recs, &[false; 2], 5, |p, t| dedup_patients(p, t));
    let live: Vec<_> = open_table(&a, &b).into_iter().filter(|r| !r.1).collect();
    assert_eq!(live.len(), 1);
    assert_eq!(live[0].0, vec![5, 0, 3, 1, 2, 0, 1, 1, 0, 1]);
}

#[test]
fn dedup_matches_plaintext_oracle_on_random_tables() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for trial in 0..3 {
        let mut demo: BTreeMap<u64, [u64; 4]> = BTreeMap::new();
        let mut recs = Vec::new();
        let mut dummy = Vec::new();
        for _ in 0..90 {
            let token = rng.gen_range(0..25u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let s = random_strata(&mut rng, 3);
            let d = *demo.entry(token).or_insert([s[1], s[2], s[3], s[4]]);
            let den = rng.gen_range(0..2);
            let num = den & rng.gen_range(0..2);
            recs.push([token, s[0], d[0], d[1], d[2], d[3], den, num, rng.gen_bool(0.1) as u64, rng.gen_range(0..2)]);
            dummy.push(rng.gen_bool(0.05));
        }
        let mut want: BTreeMap<(u64, u64), Rec> = BTreeMap::new();
        for (r, &d) in recs.iter().zip(&dummy) {
            if d {
                continue;
            }
            let e = want.entry((r[0], r[1])).or_insert(*r);
            for k in 6..10 {
                e[k] |= r[k];
            }
        }
        let mut want: Vec<Vec<u64>> = want.into_values().filter(|r| r[8] == 0).map(|r| r.to_vec()).collect();
        let (a, b) = run_records(&recs, &dummy, trial, |p, t| dedup_patients(p, t));
        let out = open_table(&a, &b);
        assert_eq!(out.len(), recs.len());
        let mut got: Vec<Vec<u64>> = out.into_iter().filter(|r| !r.1).map(|r| r.0).collect();
        want.sort();
        got.sort();
        assert_eq!(got, want);
    }
}

fn cube_cells(recs: &[Rec], dummy: &[bool], seed: u64) -> Vec<PlainRow> {
    let (a, b) = run_records(recs, dummy, seed, |p, t| data_cube(p, t));
    open_table(&a, &b)
}

#[test]
fn three_records_in_two_strata_give_two_cells() {
    let recs: Vec<Rec> = vec![
        [1, 0, 2, 0, 4, 1, 1, 1, 0, 0],
        [2, 0, 2, 0, 4, 1, 1, 0, 0, 1],
        [3, 1, 0, 1, 2, 0, 1, 1, 0, 1],
    ];
    let out = cube_cells(&recs, &[false; 3], 7);
    assert_eq!(out.len(), 3);
    let mut live: Vec<Vec<u64>> = out.into_iter().filter(|r| !r.1).map(|r| r.0).collect();
    live.sort();
    assert_eq!(live, vec![vec![0, 2, 0, 4, 1, 1, 2, 0, 1], vec![1, 0, 1, 2, 0, 1, 1, 1, 1]]);
}

#[test]
fn all_dummy_records_give_all_dummy_cells() {
    let recs: Vec<Rec> = (0..6).map(|i| [i, 0, 1, 1, 1, 1, 1, 1, 0, 1]).collect();
    assert!(cube_cells(&recs, &[true; 6], 8).iter().all(|r| r.1));
}

#[test]
fn cube_matches_plaintext_group_by() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let recs: Vec<Rec> = (0..256)
        .map(|i| {
            let s = [rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..3), rng.gen_range(0..2), rng.gen_range(0..2)];
            let den = rng.gen_range(0..2);
            [i, s[0], s[1], s[2], s[3], s[4], den, den & rng.gen_range(0..2), 0, rng.gen_range(0..2)]
        })
        .collect();
    let dummy: Vec<bool> = (0..256).map(|_| rng.gen_bool(0.2)).collect();
    let got: BTreeMap<[u64; 5], [u64; 4]> = cube_cells(&recs, &dummy, 10)
        .into_iter()
        .filter(|r| !r.1)
        .map(|r| ([r.0[0], r.0[1], r.0[2], r.0[3], r.0[4]], [r.0[5], r.0[6], r.0[7], r.0[8]]))
        .collect();
    assert_eq!(got, plain_cube(&recs, &dummy));
}

fn densify_cells(cells: &[PlainRow], years: usize, seed: u64) -> Result<Vec<[u64; 4]>> {
    let domain = CubeDomain::new(years).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (t1, t2) = share_plain_table(&cube_schema(), cells, &mut rng).unwrap();
    let (a, b) = run_local_pair(seed, |p| {
        let t = if p.is_first() { &t1 } else { &t2 };
        densify_cube(p, t, domain)
    })?;
    Ok(open_cube(&a, &b))
}

#[test]
fn single_cell_folds_into_its_slot() {
    let cells: Vec<PlainRow> = vec![(vec![0, 0, 0, 0, 0, 5, 6, 1, 2], false), (vec![0, 3, 1, 1, 1, 9, 9, 9, 9], true)];
    let dense = densify_cells(&cells, 1, 11).unwrap();
    assert_eq!(dense.len(), CELLS_PER_YEAR);
    assert_eq!(dense[0], [5, 6, 1, 2]);
    assert!(dense[1..].iter().all(|c| *c == [0; 4]));
}

#[test]
fn empty_cell_set_densifies_to_zero() {
    let dense = densify_cells(&[], 2, 12).unwrap();
    assert_eq!(dense.len(), 2 * CELLS_PER_YEAR);
    assert!(dense.iter().all(|c| *c == [0; 4]));
}

#[test]
fn random_cells_densify_like_plaintext() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let domain = CubeDomain::new(1).unwrap();
    let mut want = vec![[0u64; 4]; domain.size()];
    let mut used = std::collections::BTreeSet::new();
    let mut cells = Vec::new();
    for _ in 0..60 {
        let s = random_strata(&mut rng, 1);
        let counts = [rng.gen_range(0..1000), rng.gen_range(0..1000), rng.gen_range(0..1000), rng.gen_range(0..1000)];
        let dummy = rng.gen_bool(0.3) || !used.insert(s);
        if !dummy {
            let st = Strata { year: s[0] as u8, age: s[1] as u8, sex: s[2] as u8, race: s[3] as u8, ethnicity: s[4] as u8 };
            want[domain.index(&st).unwrap()] = counts;
        }
        let mut v = s.to_vec();
        v.extend(counts);
        cells.push((v, dummy));
    }
    assert_eq!(densify_cells(&cells, 1, 14).unwrap(), want);
}

#[test]
fn real_cell_outside_domain_aborts() {
    let cells: Vec<PlainRow> = vec![(vec![0, 7, 0, 0, 0, 1, 1, 0, 0], false)];
    assert!(matches!(densify_cells(&cells, 1, 15), Err(Error::DomainViolation)));
    let cells: Vec<PlainRow> = vec![(vec![2, 0, 0, 0, 0, 1, 1, 0, 0], false)];
    assert!(matches!(densify_cells(&cells, 2, 16), Err(Error::DomainViolation)));
    // the same key as a dummy is fine
    let cells: Vec<PlainRow> = vec![(vec![0, 7, 0, 0, 0, 1, 1, 0, 0], true)];
    assert!(densify_cells(&cells, 1, 17).is_ok());
}

fn random_plain_cube(rng: &mut ChaCha20Rng, domain: CubeDomain, max: u32) -> PlainCube {
    let mut c = PlainCube::new(domain);
    for i in 0..domain.size() {
        if rng.gen_bool(0.3) {
            c.add(&domain.strata(i), [rng.gen_range(0..max), rng.gen_range(0..max), rng.gen_range(0..max), rng.gen_range(0..max)])
                .unwrap();
        }
    }
    c
}

/// Shares several plain cubes and runs `f` over both parties' dense cubes.
fn with_cubes<T: Send>(cubes: &[PlainCube], seed: u64, f: impl Fn(&mut Party, &[DenseCube]) -> Result<T> + Sync) -> (T, T) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut mine = (Vec::new(), Vec::new());
    for c in cubes {
        let (x, y) = share_plain_cube(c, 3 << 24, &mut rng).unwrap();
        let (x, y) = pair_shares(&x, &y).unwrap();
        mine.0.push(DenseCube::from_share_file(c.domain(), x).unwrap());
        mine.1.push(DenseCube::from_share_file(c.domain(), y).unwrap());
    }
    run_local_pair(seed, |p| f(p, if p.is_first() { &mine.0 } else { &mine.1 })).unwrap()
}

fn plain_cells(c: &PlainCube) -> Vec<[u64; 4]> {
    c.cells().iter().map(|x| x.map(u64::from)).collect()
}

#[test]
fn cube_addition_identity_commutativity_and_sum() {
    let domain = CubeDomain::new(2).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(18);
    let cubes: Vec<PlainCube> = (0..3).map(|_| random_plain_cube(&mut rng, domain, 1 << 20)).collect();
    let zero = PlainCube::new(domain);
    let all = [cubes[0].clone(), cubes[1].clone(), cubes[2].clone(), zero];
    let (a, b) = with_cubes(&all, 19, |p, c| {
        Ok((add_cubes(p, &c[0], &c[3])?, add_cubes(p, &c[0], &c[1])?, add_cubes(p, &c[1], &c[0])?, {
            let s = add_cubes(p, &c[0], &c[1])?;
            add_cubes(p, &s, &c[2])?
        }))
    });
    assert_eq!(open_cube(&a.0, &b.0), plain_cells(&cubes[0]));
    assert_eq!(open_cube(&a.1, &b.1), open_cube(&a.2, &b.2));
    let want: Vec<[u64; 4]> = (0..domain.size())
        .map(|i| std::array::from_fn(|k| cubes.iter().map(|c| c.cells()[i][k] as u64).sum()))
        .collect();
    assert_eq!(open_cube(&a.3, &b.3), want);
}

#[test]
fn adding_cubes_of_different_domains_fails() {
    let x = DenseCube::zero(CubeDomain::new(1).unwrap());
    let y = DenseCube::zero(CubeDomain::new(2).unwrap());
    let (a, _) = run_local_pair(20, |p| Ok(matches!(add_cubes(p, &x, &y), Err(Error::DomainMismatch(_))))).unwrap();
    assert!(a);
}

fn open_rollup(a: &RollupTable, b: &RollupTable) -> Vec<[u64; 4]> {
    let cols: Vec<Vec<u64>> = (0..4).map(|k| open_counters(&a.counters[k], &b.counters[k])).collect();
    (0..a.rows.len()).map(|i| [cols[0][i], cols[1][i], cols[2][i], cols[3][i]]).collect()
}

#[test]
fn two_cells_roll_up_into_one_age_row() {
    let domain = CubeDomain::new(1).unwrap();
    let mut c = PlainCube::new(domain);
    c.add(&Strata { year: 0, age: 2, sex: 0, race: 4, ethnicity: 1 }, [4, 4, 0, 0]).unwrap();
    c.add(&Strata { year: 0, age: 2, sex: 1, race: 2, ethnicity: 0 }, [6, 6, 0, 0]).unwrap();
    let (a, b) = with_cubes(&[c], 21, |p, c| rollup(p, &c[0], Dimension::Age));
    let rows = open_rollup(&a, &b);
    assert_eq!(a.rows[2], (0, 2));
    assert_eq!(rows[2], [10, 10, 0, 0]);
    assert_eq!(rows.iter().map(|r| r[0]).sum::<u64>(), 10);
}

#[test]
fn random_cube_rolls_up_like_plaintext() {
    let domain = CubeDomain::new(3).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let cube = random_plain_cube(&mut rng, domain, 5000);
    let zero = PlainCube::new(domain);
    let (a, b) = with_cubes(&[cube.clone(), zero], 23, |p, c| {
        Dimension::ALL.iter().map(|&d| Ok((rollup(p, &c[0], d)?, rollup(p, &c[1], d)?))).collect::<Result<Vec<_>>>()
    });
    for (i, d) in Dimension::ALL.into_iter().enumerate() {
        let mut want = vec![[0u64; 4]; domain.years() * d.categories()];
        for (j, cell) in cube.cells().iter().enumerate() {
            let s = domain.strata(j);
            let row = &mut want[s.year as usize * d.categories() + d.category_of(&s)];
            for k in 0..4 {
                row[k] += cell[k] as u64;
            }
        }
        assert_eq!(open_rollup(&a[i].0, &b[i].0), want, "{d:?}");
        assert!(open_rollup(&a[i].1, &b[i].1).iter().all(|r| *r == [0; 4]));
    }
}

#[test]
fn suppression_hides_counts_below_threshold() {
    let values: Vec<u64> = vec![0, 1, 5, 10, 11, 12, 1000, u32::MAX as u64];
    let mut rng = ChaCha20Rng::seed_from_u64(24);
    let masks: Vec<u64> = values.iter().map(|_| rng.gen::<u32>() as u64).collect();
    let other: Vec<u64> = values.iter().zip(&masks).map(|(v, m)| v ^ m).collect();
    let (a, b) = run_local_pair(25, |p| {
        let mine = if p.is_first() { &masks } else { &other };
        suppress_and_reveal(p, &crate::oblivious::circuits::slices_from_values(mine, 32), 11)
    })
    .unwrap();
    let shown = open_counters(&a.values, &b.values);
    let flags = a.suppressed.xor(&b.suppressed);
    let want_flags = [false, true, true, true, false, false, false, false];
    for (i, v) in values.iter().enumerate() {
        assert_eq!(flags.get(i), want_flags[i], "value {v}");
        assert_eq!(shown[i], if want_flags[i] { 0 } else { *v });
    }
}

#[test]
fn padded_single_site_cube_has_fixed_size() {
    let domain = CubeDomain::new(1).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(26);
    let one = vec![(Strata { year: 0, age: 1, sex: 1, race: 1, ethnicity: 1 }, [1, 1, 0, 0])];
    let many: Vec<(Strata, [u32; 4])> = (0..300).map(|i| (domain.strata(i), [2, 3, 0, 0])).collect();
    let (x1, _) = pad_single_site_cube(&one, domain, 7, &mut rng).unwrap();
    let (x2, _) = pad_single_site_cube(&many, domain, 7, &mut rng).unwrap();
    let (x3, y3) = pad_single_site_cube(&[], domain, 7, &mut rng).unwrap();
    assert_eq!(x1.row_count, domain.size() as u64);
    assert_eq!(x1.encode().len(), x2.encode().len());
    let (p, q) = pair_shares(&x3, &y3).unwrap();
    let c1 = DenseCube::from_share_file(domain, p).unwrap();
    let c2 = DenseCube::from_share_file(domain, q).unwrap();
    assert!(open_cube(&c1, &c2).iter().all(|c| *c == [0; 4]));
    let bad = vec![(Strata { year: 1, ..Default::default() }, [1, 1, 0, 0])];
    assert!(pad_single_site_cube(&bad, domain, 7, &mut rng).is_err());
}

#[test]
fn wrongly_sized_cube_share_is_rejected() {
    let mut rng = ChaCha20Rng::seed_from_u64(28);
    let (x, _) = share_plain_cube(&PlainCube::new(CubeDomain::new(1).unwrap()), 1, &mut rng).unwrap();
    assert!(matches!(DenseCube::from_share_file(CubeDomain::new(2).unwrap(), &x), Err(Error::DomainMismatch(_))));
}
