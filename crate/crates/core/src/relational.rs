//! Oblivious relational operators of the study pipeline.
//!
//! Rows are never removed: filtered rows become dummies, so every operator's
//! cost and message pattern is a function of the public cardinality.

use rand::{CryptoRng, RngCore};

use crate::error::{Error, Result};
use crate::oblivious::circuits::{concat_slices, extract_slices, gather_slices, values_from_slices, xor_slices};
use crate::oblivious::scan::{adjacent_equal, run_ends, scan_group_or};
use crate::oblivious::{bitonic_sort, ob_scan_group_agg, Lanes, ObliviousTable, Party, Schema, SortKey};
use crate::sharing::{put_bits, share_table, take_bits, FixedWidthRow, ShareFile};

/// Field names of patient-year record tables.
pub mod fields {
    pub const TOKEN: &str = "token";
    pub const YEAR: &str = "year";
    pub const AGE: &str = "age";
    pub const SEX: &str = "sex";
    pub const RACE: &str = "race";
    pub const ETHNICITY: &str = "ethnicity";
    pub const DENOMINATOR: &str = "denominator";
    pub const NUMERATOR: &str = "numerator";
    pub const EXCLUDED: &str = "excluded";
    pub const MULTI_SITE: &str = "multi_site";
    pub const CANONICAL: &str = "canonical";

    pub const STRATA: [&str; 5] = [YEAR, AGE, SEX, RACE, ETHNICITY];
    pub const COUNTERS: [&str; 4] = ["numerator_count", "denominator_count", "numerator_multisite", "denominator_multisite"];
}

pub const AGE_BANDS: usize = 7;
pub const SEXES: usize = 3;
pub const RACES: usize = 6;
pub const ETHNICITIES: usize = 3;
pub const CELLS_PER_YEAR: usize = AGE_BANDS * SEXES * RACES * ETHNICITIES;
pub const MAX_YEARS: usize = 3;
pub const COUNTER_WIDTH: u32 = 32;
pub const STRATA_WIDTHS: [u32; 5] = [2, 3, 2, 3, 2];

/// Position of one cell in the strata domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Strata {
    pub year: u8,
    pub age: u8,
    pub sex: u8,
    pub race: u8,
    pub ethnicity: u8,
}

impl Strata {
    pub fn values(&self) -> [u64; 5] {
        [self.year as u64, self.age as u64, self.sex as u64, self.race as u64, self.ethnicity as u64]
    }
}

/// The public Cartesian product of years and the four demographic dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CubeDomain {
    years: usize,
}

impl CubeDomain {
    pub fn new(years: usize) -> Result<Self> {
        if years == 0 || years > MAX_YEARS {
            return Err(Error::InvalidArgument(format!("{years} study years; 1 to {MAX_YEARS} supported")));
        }
        Ok(CubeDomain { years })
    }

    pub fn years(&self) -> usize {
        self.years
    }

    pub fn size(&self) -> usize {
        self.years * CELLS_PER_YEAR
    }

    pub fn contains(&self, s: &Strata) -> bool {
        (s.year as usize) < self.years
            && (s.age as usize) < AGE_BANDS
            && (s.sex as usize) < SEXES
            && (s.race as usize) < RACES
            && (s.ethnicity as usize) < ETHNICITIES
    }

    /// `((((year * 7 + age) * 3 + sex) * 6 + race) * 3 + ethnicity`.
    pub fn index(&self, s: &Strata) -> Option<usize> {
        self.contains(s).then(|| {
            ((((s.year as usize * AGE_BANDS + s.age as usize) * SEXES + s.sex as usize) * RACES + s.race as usize)
                * ETHNICITIES)
                + s.ethnicity as usize
        })
    }

    pub fn strata(&self, index: usize) -> Strata {
        assert!(index < self.size());
        let ethnicity = index % ETHNICITIES;
        let r = index / ETHNICITIES;
        let race = r % RACES;
        let r = r / RACES;
        let sex = r % SEXES;
        let r = r / SEXES;
        let age = r % AGE_BANDS;
        let year = r / AGE_BANDS;
        Strata { year: year as u8, age: age as u8, sex: sex as u8, race: race as u8, ethnicity: ethnicity as u8 }
    }
}

/// Schema of patient-year record tables, in the order rows are serialized.
pub fn record_schema() -> Schema {
    Schema::new(&[
        (fields::TOKEN, 64),
        (fields::YEAR, 2),
        (fields::AGE, 3),
        (fields::SEX, 2),
        (fields::RACE, 3),
        (fields::ETHNICITY, 2),
        (fields::DENOMINATOR, 1),
        (fields::NUMERATOR, 1),
        (fields::EXCLUDED, 1),
        (fields::MULTI_SITE, 1),
    ])
}

/// Schema of data-cube cells.
pub fn cube_schema() -> Schema {
    let mut f: Vec<(&str, u32)> = fields::STRATA.iter().copied().zip(STRATA_WIDTHS).collect();
    f.extend(fields::COUNTERS.iter().map(|c| (*c, COUNTER_WIDTH)));
    Schema::new(&f)
}

/// A secret-shared cube holding four 32-bit counters for every domain cell, in
/// canonical cell order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseCube {
    domain: CubeDomain,
    counters: Vec<Vec<Lanes>>,
}

impl DenseCube {
    pub fn new(domain: CubeDomain, counters: Vec<Vec<Lanes>>) -> Result<Self> {
        if counters.len() != 4
            || counters.iter().any(|c| c.len() != COUNTER_WIDTH as usize || c.iter().any(|s| s.len() != domain.size()))
        {
            return Err(Error::DomainMismatch("counter words do not cover the domain".into()));
        }
        Ok(DenseCube { domain, counters })
    }

    pub fn zero(domain: CubeDomain) -> Self {
        DenseCube { domain, counters: vec![vec![Lanes::zeros(domain.size()); COUNTER_WIDTH as usize]; 4] }
    }

    pub fn domain(&self) -> CubeDomain {
        self.domain
    }

    /// Counter `k` (numerator, denominator, numerator_multisite, denominator_multisite).
    pub fn counter(&self, k: usize) -> &[Lanes] {
        &self.counters[k]
    }

    pub fn from_share_file(domain: CubeDomain, file: &ShareFile) -> Result<Self> {
        if file.row_count as usize != domain.size() || file.row_width_bits as u32 != 4 * COUNTER_WIDTH {
            return Err(Error::DomainMismatch(format!(
                "cube share has {} rows of {} bits, domain needs {} rows of {}",
                file.row_count,
                file.row_width_bits,
                domain.size(),
                4 * COUNTER_WIDTH
            )));
        }
        file.check_payload()?;
        let n = domain.size();
        let mut counters = vec![vec![Lanes::zeros(n); COUNTER_WIDTH as usize]; 4];
        for i in 0..n {
            let row = file.row(i);
            let mut pos = 0;
            for c in counters.iter_mut() {
                let v = take_bits(row, &mut pos, COUNTER_WIDTH);
                for (b, s) in c.iter_mut().enumerate() {
                    if (v >> b) & 1 == 1 {
                        s.set(i, true);
                    }
                }
            }
        }
        DenseCube::new(domain, counters)
    }
}

/// A plaintext dense cube, as a data partner computes it locally.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainCube {
    domain: CubeDomain,
    cells: Vec<[u32; 4]>,
}

impl PlainCube {
    pub fn new(domain: CubeDomain) -> Self {
        PlainCube { domain, cells: vec![[0; 4]; domain.size()] }
    }

    pub fn domain(&self) -> CubeDomain {
        self.domain
    }

    pub fn cells(&self) -> &[[u32; 4]] {
        &self.cells
    }

    pub fn add(&mut self, s: &Strata, counts: [u32; 4]) -> Result<()> {
        let i = self.domain.index(s).ok_or(Error::DomainViolation)?;
        for k in 0..4 {
            self.cells[i][k] = self.cells[i][k].wrapping_add(counts[k]);
        }
        Ok(())
    }

    pub fn non_empty_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.iter().any(|&v| v != 0)).count()
    }
}

struct CubeRow<'a>(&'a [u32; 4]);

impl FixedWidthRow for CubeRow<'_> {
    fn width_bits(&self) -> u16 {
        (4 * COUNTER_WIDTH) as u16
    }

    fn write_bits(&self, out: &mut [u8]) {
        let mut pos = 0;
        for &v in self.0 {
            put_bits(out, &mut pos, v as u64, COUNTER_WIDTH);
        }
    }
}

/// Expands a local cube over the full domain and shares it. Both shares have the
/// same size however many strata the partner actually populates.
pub fn pad_single_site_cube<R: RngCore + CryptoRng>(
    local: &[(Strata, [u32; 4])],
    domain: CubeDomain,
    table_id: u32,
    rng: &mut R,
) -> Result<(ShareFile, ShareFile)> {
    let mut dense = PlainCube::new(domain);
    for (s, counts) in local {
        if !domain.contains(s) {
            return Err(Error::InvalidArgument(format!("local cell {s:?} lies outside the study domain")));
        }
        dense.add(s, *counts)?;
    }
    share_plain_cube(&dense, table_id, rng)
}

pub fn share_plain_cube<R: RngCore + CryptoRng>(cube: &PlainCube, table_id: u32, rng: &mut R) -> Result<(ShareFile, ShareFile)> {
    let rows: Vec<CubeRow> = cube.cells.iter().map(CubeRow).collect();
    share_table(&rows, table_id, (4 * COUNTER_WIDTH) as u16, rng)
}

/// Turns every excluded row into a dummy: `dummy' = dummy | excluded`.
pub fn apply_exclusion(party: &mut Party, table: &ObliviousTable) -> Result<ObliviousTable> {
    let excluded = table.flag(fields::EXCLUDED)?.clone();
    let dummy = party.or(table.dummy(), &excluded)?;
    let mut out = table.clone();
    out.set_dummy(dummy);
    Ok(out)
}

/// Collapses each (token, year) group to one surviving row and drops groups
/// with any exclusion.
///
/// Equivalent to [`collapse_patient_years`] followed by [`apply_exclusion`].
pub fn dedup_patients(party: &mut Party, table: &ObliviousTable) -> Result<ObliviousTable> {
    let collapsed = collapse_patient_years(party, table)?;
    apply_exclusion(party, &collapsed)
}

/// Sorts by (token, year) and keeps one row per group.
///
/// A scan ORs the excluded, numerator, denominator and multi-site flags over each
/// group and carries the strata of the group's first row forward. The last row of
/// the group keeps the result; the other rows become dummies. Excluded survivors
/// are left for [`apply_exclusion`].
pub fn collapse_patient_years(party: &mut Party, table: &ObliviousTable) -> Result<ObliviousTable> {
    let sorted = bitonic_sort(party, table, &[SortKey::asc(fields::TOKEN), SortKey::asc(fields::YEAR)])?;
    let mut key = sorted.column(fields::TOKEN)?.to_vec();
    key.extend_from_slice(sorted.column(fields::YEAR)?);
    let same = adjacent_equal(party, &key, sorted.dummy())?;

    let or_fields = [fields::EXCLUDED, fields::NUMERATOR, fields::DENOMINATOR, fields::MULTI_SITE];
    let flags: Vec<Lanes> = or_fields.iter().map(|f| sorted.flag(f).cloned()).collect::<Result<_>>()?;
    let carried_fields = [fields::AGE, fields::SEX, fields::RACE, fields::ETHNICITY];
    let carried: Vec<Vec<Lanes>> = carried_fields.iter().map(|f| sorted.column(f).map(|c| c.to_vec())).collect::<Result<_>>()?;
    let (ors, held) = scan_group_or(party, &same, &flags, &carried)?;
    let last = run_ends(party, &same, sorted.dummy())?;

    let mut out = sorted;
    for (f, v) in or_fields.iter().zip(ors) {
        out.set_column(f, vec![v])?;
    }
    for (f, v) in carried_fields.iter().zip(held) {
        out.set_column(f, v)?;
    }
    out.set_dummy(party.not(&last));
    Ok(out)
}

/// Counts survivors per full strata key.
///
/// Output cells keep the input cardinality; only the last row of each strata run
/// is real and carries (numerator, denominator, numerator & multi-site,
/// denominator & multi-site) counts for the run.
pub fn data_cube(party: &mut Party, table: &ObliviousTable) -> Result<ObliviousTable> {
    let key: Vec<SortKey> = fields::STRATA.iter().map(|f| SortKey::asc(f)).collect();
    let sorted = bitonic_sort(party, table, &key)?;
    let num = sorted.flag(fields::NUMERATOR)?.clone();
    let den = sorted.flag(fields::DENOMINATOR)?.clone();
    let ms = sorted.flag(fields::MULTI_SITE)?.clone();
    let both = party.and_many(&[(&num, &ms), (&den, &ms)])?;

    let mut spec: Vec<(&str, u32)> = fields::STRATA.iter().copied().zip(STRATA_WIDTHS).collect();
    spec.extend(fields::COUNTERS.iter().map(|c| (*c, 1)));
    let mut columns: Vec<Vec<Lanes>> =
        fields::STRATA.iter().map(|f| sorted.column(f).map(|c| c.to_vec())).collect::<Result<_>>()?;
    columns.extend([vec![num], vec![den], vec![both[0].clone()], vec![both[1].clone()]]);
    let flagged = ObliviousTable::new(Schema::new(&spec), columns, sorted.dummy().clone())?;

    let cells = ob_scan_group_agg(party, &flagged, &fields::STRATA, &fields::COUNTERS)?;
    ObliviousTable::new(cube_schema(), cells.columns().to_vec(), cells.dummy().clone())
}

/// ORs all lanes of `bits` into a single lane.
fn or_all_lanes(party: &mut Party, bits: &Lanes) -> Result<Lanes> {
    if bits.is_empty() {
        return Ok(Lanes::zeros(1));
    }
    let mut cur = party.not(bits);
    while cur.len() > 1 {
        let half = cur.len() / 2;
        let a = cur.extract(0, half);
        let b = cur.extract(half, half);
        let mut next = party.and(&a, &b)?;
        if cur.len() % 2 == 1 {
            next.push(cur.get(cur.len() - 1));
        }
        cur = next;
    }
    Ok(party.not(&cur))
}

/// Aligns sparse cube cells with the full domain.
///
/// Appends one zero canonical row per domain cell, sorts by (key, canonical last),
/// folds each real cell into the canonical row right after it, then sorts the
/// canonical rows to the front in key order. Expects at most one real cell per
/// key, which [`data_cube`] guarantees; a real cell that finds no canonical row of
/// its key aborts with [`Error::DomainViolation`], and only that single bit is
/// ever opened.
pub fn densify_cube(party: &mut Party, cells: &ObliviousTable, domain: CubeDomain) -> Result<DenseCube> {
    if cells.schema() != &cube_schema() {
        return Err(Error::Schema("densify expects data-cube cells".into()));
    }
    let mut spec: Vec<(String, u32)> = cube_schema().fields().iter().map(|f| (f.name.clone(), f.width)).collect();
    spec.push((fields::CANONICAL.to_string(), 1));
    let spec: Vec<(&str, u32)> = spec.iter().map(|(n, w)| (n.as_str(), *w)).collect();
    let schema = Schema::new(&spec);

    let mut columns = cells.columns().to_vec();
    columns.push(vec![Lanes::zeros(cells.len())]);
    let mut work = ObliviousTable::new(schema.clone(), columns, cells.dummy().clone())?;
    let canon_rows: Vec<(Vec<u64>, bool)> = (0..domain.size())
        .map(|i| {
            let mut v = domain.strata(i).values().to_vec();
            v.extend([0, 0, 0, 0, 1]);
            (v, false)
        })
        .collect();
    work.append(&ObliviousTable::public(schema, &canon_rows, party.is_first())?)?;

    let mut key: Vec<SortKey> = fields::STRATA.iter().map(|f| SortKey::asc(f)).collect();
    key.push(SortKey::asc(fields::CANONICAL));
    let sorted = bitonic_sort(party, &work, &key)?;
    let n = sorted.len();

    let mut strata_bits = Vec::new();
    for f in fields::STRATA {
        strata_bits.extend_from_slice(sorted.column(f)?);
    }
    let canon = sorted.flag(fields::CANONICAL)?.clone();
    let cur = |l: &Lanes| l.extract(1, n - 1);
    let prev = |l: &Lanes| l.extract(0, n - 1);
    let key_eq = party.equal(
        &strata_bits.iter().map(cur).collect::<Vec<_>>(),
        &strata_bits.iter().map(prev).collect::<Vec<_>>(),
    )?;
    let prev_cell = party.not(&prev(&canon));
    let prev_real = party.not(&prev(sorted.dummy()));
    let r = party.and_many(&[(&cur(&canon), &prev_cell), (&prev_real, &key_eq)])?;
    let take_tail = party.and(&r[0], &r[1])?;
    let mut take = Lanes::zeros(1);
    take.append(&take_tail);

    // A real cell must be followed by the canonical row of its key.
    let mut next_take = take_tail.clone();
    next_take.push(false);
    let real = party.not(sorted.dummy());
    let is_cell = party.not(&canon);
    let real_cell = party.and(&real, &is_cell)?;
    let orphan = party.and(&real_cell, &party.not(&next_take))?;
    let any_orphan = or_all_lanes(party, &orphan)?;
    if party.reveal(&any_orphan)?.get(0) {
        return Err(Error::DomainViolation);
    }

    let mut folded = sorted.clone();
    for c in fields::COUNTERS {
        let col = sorted.column(c)?;
        let mut shifted: Vec<Lanes> = Vec::with_capacity(col.len());
        for s in col {
            let mut l = Lanes::zeros(1);
            l.append(&s.extract(0, n - 1));
            shifted.push(l);
        }
        folded.set_column(c, party.mux(&take, &shifted, col)?)?;
    }
    folded.set_dummy(party.not(&canon));

    let mut key2 = vec![SortKey::desc(fields::CANONICAL)];
    key2.extend(fields::STRATA.iter().map(|f| SortKey::asc(f)));
    let ordered = bitonic_sort(party, &folded, &key2)?;
    let front = ordered.extract_rows(0, domain.size());
    let counters = fields::COUNTERS.iter().map(|c| front.column(c).map(|x| x.to_vec())).collect::<Result<_>>()?;
    DenseCube::new(domain, counters)
}

/// Cell-wise sum of two cubes over the same domain. No sorting.
pub fn add_cubes(party: &mut Party, x: &DenseCube, y: &DenseCube) -> Result<DenseCube> {
    if x.domain != y.domain {
        return Err(Error::DomainMismatch(format!("{} and {} study years", x.domain.years, y.domain.years)));
    }
    let d = x.domain.size();
    let xs: Vec<&[Lanes]> = x.counters.iter().map(|c| c.as_slice()).collect();
    let ys: Vec<&[Lanes]> = y.counters.iter().map(|c| c.as_slice()).collect();
    let sum = party.add(&concat_slices(&xs), &concat_slices(&ys))?;
    let counters = (0..4).map(|k| extract_slices(&sum, k * d, d)).collect();
    DenseCube::new(x.domain, counters)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    Age,
    Sex,
    Race,
    Ethnicity,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::Age, Dimension::Sex, Dimension::Race, Dimension::Ethnicity];

    pub fn categories(self) -> usize {
        match self {
            Dimension::Age => AGE_BANDS,
            Dimension::Sex => SEXES,
            Dimension::Race => RACES,
            Dimension::Ethnicity => ETHNICITIES,
        }
    }

    pub fn category_of(self, s: &Strata) -> usize {
        (match self {
            Dimension::Age => s.age,
            Dimension::Sex => s.sex,
            Dimension::Race => s.race,
            Dimension::Ethnicity => s.ethnicity,
        }) as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Age => "age",
            Dimension::Sex => "sex",
            Dimension::Race => "race",
            Dimension::Ethnicity => "ethnicity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dimension {s}")))
    }
}

/// Secret per-(year, category) counters of one dimension, rows in (year, category) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RollupTable {
    pub dimension: Dimension,
    pub rows: Vec<(usize, usize)>,
    pub counters: Vec<Vec<Lanes>>,
}

/// Marginal sums of the cube over one dimension, added as balanced trees.
pub fn rollup(party: &mut Party, cube: &DenseCube, dimension: Dimension) -> Result<RollupTable> {
    let domain = cube.domain;
    let cats = dimension.categories();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); domain.years * cats];
    for i in 0..domain.size() {
        let s = domain.strata(i);
        groups[s.year as usize * cats + dimension.category_of(&s)].push(i);
    }
    let g = groups.len();
    let mut size = groups[0].len();
    debug_assert!(groups.iter().all(|m| m.len() == size));

    // Lane layout: [counter][group][member].
    let order: Vec<usize> = (0..4)
        .flat_map(|k| groups.iter().flat_map(move |m| m.iter().map(move |&i| k * domain.size() + i)))
        .collect();
    let all: Vec<&[Lanes]> = cube.counters.iter().map(|c| c.as_slice()).collect();
    let mut cur = gather_slices(&concat_slices(&all), &order);
    while size > 1 {
        let pairs = size / 2;
        let mut xi = Vec::new();
        let mut yi = Vec::new();
        for block in 0..4 * g {
            for p in 0..pairs {
                xi.push(block * size + 2 * p);
                yi.push(block * size + 2 * p + 1);
            }
        }
        let sums = party.add(&gather_slices(&cur, &xi), &gather_slices(&cur, &yi))?;
        let next_size = pairs + size % 2;
        let mut idx = Vec::with_capacity(4 * g * next_size);
        // sums come first in the combined vector, leftovers after
        let combined: Vec<Lanes> = if size % 2 == 1 {
            let left: Vec<usize> = (0..4 * g).map(|b| b * size + size - 1).collect();
            let lo = gather_slices(&cur, &left);
            concat_slices(&[&sums, &lo])
        } else {
            sums
        };
        for block in 0..4 * g {
            for p in 0..pairs {
                idx.push(block * pairs + p);
            }
            if size % 2 == 1 {
                idx.push(4 * g * pairs + block);
            }
        }
        cur = gather_slices(&combined, &idx);
        size = next_size;
    }
    let counters = (0..4).map(|k| extract_slices(&cur, k * g, g)).collect();
    let rows = (0..domain.years).flat_map(|y| (0..cats).map(move |c| (y, c))).collect();
    Ok(RollupTable { dimension, rows, counters })
}

/// This party's share of suppressed counters, ready to send to the analyst.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuppressedShares {
    pub values: Vec<Lanes>,
    pub suppressed: Lanes,
}

/// Small-cell suppression inside the secure computation.
///
/// `suppressed = (c > 0) & (c < threshold)` and the released value is 0 where
/// suppressed, `c` elsewhere. Nothing is opened here; the result is released only
/// as output shares.
pub fn suppress_and_reveal(party: &mut Party, counters: &[Lanes], threshold: u32) -> Result<SuppressedShares> {
    let n = counters.first().map_or(0, |s| s.len());
    let nonzero = party.or_reduce(counters.to_vec())?;
    let limit = party.constant_word(&vec![threshold as u64; n], counters.len() as u32);
    let small = party.less_than(counters, &limit)?;
    let suppressed = party.and(&nonzero, &small)?;
    let keep = party.not(&suppressed);
    let mask = vec![keep; counters.len()];
    let values = party.and_slices(counters, &mask)?;
    Ok(SuppressedShares { values, suppressed })
}

/// Plain counter values of a pair of shares. Test and analyst helper.
pub fn open_counters(a: &[Lanes], b: &[Lanes]) -> Vec<u64> {
    values_from_slices(&xor_slices(a, b))
}

#[cfg(test)]
mod tests;
