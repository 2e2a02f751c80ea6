//! Released result tables, their CSV form, and the output shares sent to the analyst.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::relational::Dimension;
use crate::study::record::{AGE_BAND_LABELS, ETHNICITY_LABELS, RACE_LABELS, SEX_LABELS};

pub const RESULTS_HEADER: &str =
    "dimension,category,year,numerator,denominator,numerator_multisite,denominator_multisite";

pub fn category_label(d: Dimension, c: usize) -> &'static str {
    match d {
        Dimension::Age => AGE_BAND_LABELS[c],
        Dimension::Sex => SEX_LABELS[c],
        Dimension::Race => RACE_LABELS[c],
        Dimension::Ethnicity => ETHNICITY_LABELS[c],
    }
}

fn category_index(d: Dimension, label: &str) -> Option<usize> {
    (0..d.categories()).find(|&c| category_label(d, c) == label)
}

/// `(dimension, year index, category)` of every released row, in release order.
pub fn output_layout(years: usize) -> Vec<(Dimension, usize, usize)> {
    Dimension::ALL
        .into_iter()
        .flat_map(|d| (0..years).flat_map(move |y| (0..d.categories()).map(move |c| (d, y, c))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputRow {
    pub dimension: Dimension,
    pub category: usize,
    pub year: u16,
    /// numerator, denominator, numerator_multisite, denominator_multisite; 0 where suppressed.
    pub counts: [u32; 4],
    pub suppressed: [bool; 4],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudyOutput {
    pub years: Vec<u16>,
    pub rows: Vec<OutputRow>,
}

impl StudyOutput {
    /// Applies the small-cell rule to unsuppressed counts laid out as [`output_layout`].
    pub fn from_counts(years: &[u16], counts: &[[u64; 4]], threshold: u32) -> Result<Self> {
        let layout = output_layout(years.len());
        if counts.len() != layout.len() {
            return Err(Error::InvalidArgument(format!("{} rows for a layout of {}", counts.len(), layout.len())));
        }
        let rows = layout
            .iter()
            .zip(counts)
            .map(|(&(d, y, c), v)| {
                let suppressed = v.map(|x| x > 0 && x < threshold as u64);
                let counts = std::array::from_fn(|k| if suppressed[k] { 0 } else { v[k] as u32 });
                OutputRow { dimension: d, category: c, year: years[y], counts, suppressed }
            })
            .collect();
        Ok(StudyOutput { years: years.to_vec(), rows })
    }

    pub fn rows_of(&self, d: Dimension) -> impl Iterator<Item = &OutputRow> {
        self.rows.iter().filter(move |r| r.dimension == d)
    }

    pub fn render_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{},{}", r.dimension.name(), category_label(r.dimension, r.category), r.year).unwrap();
            for k in 0..4 {
                if r.suppressed[k] {
                    s.push_str(",*");
                } else {
                    write!(s, ",{}", r.counts[k]).unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        if rdr.headers()?.iter().ne(RESULTS_HEADER.split(',')) {
            return Err(Error::Csv { line: 1, message: format!("header must be {RESULTS_HEADER}") });
        }
        let mut years = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |m: String| Error::Csv { line, message: m };
            let dimension = Dimension::parse(&rec[0]).map_err(|e| bad(e.to_string()))?;
            let category =
                category_index(dimension, &rec[1]).ok_or_else(|| bad(format!("unknown category {:?}", &rec[1])))?;
            let year: u16 = rec[2].parse().map_err(|_| bad(format!("bad year {:?}", &rec[2])))?;
            if !years.contains(&year) {
                years.push(year);
            }
            let mut counts = [0u32; 4];
            let mut suppressed = [false; 4];
            for k in 0..4 {
                let f = &rec[3 + k];
                if f == "*" {
                    suppressed[k] = true;
                } else {
                    counts[k] = f.parse().map_err(|_| bad(format!("bad count {f:?}")))?;
                }
            }
            rows.push(OutputRow { dimension, category, year, counts, suppressed });
        }
        Ok(StudyOutput { years, rows })
    }
}

pub const OUTPUT_MAGIC: &[u8; 4] = b"VDFO";
pub const OUTPUT_VERSION: u16 = 1;

/// One compute party's share of the released tables.
///
/// Layout: magic, version u16, share index u8, session id (16 bytes), year count
/// u8, each year u16, entry count u32, then per entry a u32 value share and a u8
/// suppression-flag share. Integers little-endian. Entries follow
/// [`output_layout`] with the four counters of each row adjacent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputShare {
    pub share_index: u8,
    pub session_id: [u8; 16],
    pub years: Vec<u16>,
    pub values: Vec<u32>,
    pub flags: Vec<bool>,
}

impl OutputShare {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 5 * self.values.len());
        out.extend_from_slice(OUTPUT_MAGIC);
        out.extend_from_slice(&OUTPUT_VERSION.to_le_bytes());
        out.push(self.share_index);
        out.extend_from_slice(&self.session_id);
        out.push(self.years.len() as u8);
        for y in &self.years {
            out.extend_from_slice(&y.to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for (v, f) in self.values.iter().zip(&self.flags) {
            out.extend_from_slice(&v.to_le_bytes());
            out.push(*f as u8);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ShareFormat(format!("output share: {m}"));
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(bad("truncated"));
            }
            let (h, t) = r.split_at(n);
            r = t;
            Ok(h)
        };
        if take(4)? != OUTPUT_MAGIC {
            return Err(bad("bad magic"));
        }
        if u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) != OUTPUT_VERSION {
            return Err(bad("unsupported version"));
        }
        let share_index = take(1)?[0];
        let session_id: [u8; 16] = take(16)?.try_into().expect("16 bytes");
        let ny = take(1)?[0] as usize;
        let mut years = Vec::with_capacity(ny);
        for _ in 0..ny {
            years.push(u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")));
        }
        let n = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut values = Vec::with_capacity(n);
        let mut flags = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")));
            let f = take(1)?[0];
            if f > 1 {
                return Err(bad("flag byte out of range"));
            }
            flags.push(f == 1);
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(OutputShare { share_index, session_id, years, values, flags })
    }
}

/// Combines the two compute parties' output shares into the result tables.
pub fn open_at_analyst(a: &OutputShare, b: &OutputShare) -> Result<StudyOutput> {
    if a.session_id != b.session_id {
        return Err(Error::ShareMismatch("output shares come from different sessions".into()));
    }
    if !matches!((a.share_index, b.share_index), (1, 2) | (2, 1)) {
        return Err(Error::ShareMismatch(format!("share indices {} and {}", a.share_index, b.share_index)));
    }
    if a.years != b.years || a.values.len() != b.values.len() {
        return Err(Error::ShareMismatch("output shares have different shapes".into()));
    }
    let layout = output_layout(a.years.len());
    if a.values.len() != 4 * layout.len() {
        return Err(Error::ShareFormat(format!("{} entries for {} rows", a.values.len(), layout.len())));
    }
    let rows = layout
        .iter()
        .enumerate()
        .map(|(i, &(d, y, c))| {
            let counts = std::array::from_fn(|k| a.values[4 * i + k] ^ b.values[4 * i + k]);
            let suppressed = std::array::from_fn(|k| a.flags[4 * i + k] ^ b.flags[4 * i + k]);
            OutputRow { dimension: d, category: c, year: a.years[y], counts, suppressed }
        })
        .collect();
    Ok(StudyOutput { years: a.years.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StudyOutput {
        let layout = output_layout(2);
        let counts: Vec<[u64; 4]> = (0..layout.len() as u64).map(|i| [i % 13, i * 3, 0, i % 11]).collect();
        StudyOutput::from_counts(&[2019, 2020], &counts, 11).unwrap()
    }

    #[test]
    fn layout_covers_every_category_and_year() {
        assert_eq!(output_layout(1).len(), 7 + 3 + 6 + 3);
        assert_eq!(output_layout(3).len(), 3 * 19);
    }

    #[test]
    fn csv_round_trips() {
        let out = sample();
        let text = out.render_csv();
        assert!(text.starts_with(RESULTS_HEADER));
        assert!(text.contains("race,Native Hawaiian or Pacific Islander,2019,"));
        assert_eq!(StudyOutput::parse_csv(&text).unwrap(), out);
    }

    #[test]
    fn suppression_rule_at_the_boundary() {
        let counts = vec![[10, 11, 0, 1]; output_layout(1).len()];
        let out = StudyOutput::from_counts(&[2018], &counts, 11).unwrap();
        let r = &out.rows[0];
        assert_eq!(r.suppressed, [true, false, false, true]);
        assert_eq!(r.counts, [0, 11, 0, 0]);
        assert!(out.render_csv().lines().nth(1).unwrap().ends_with(",*,11,0,*"));
    }

    #[test]
    fn shares_pair_only_within_a_session() {
        let a = OutputShare { share_index: 1, session_id: [1; 16], years: vec![2018], values: vec![5; 76], flags: vec![true; 76] };
        let mut b = OutputShare { share_index: 2, values: vec![4; 76], flags: vec![false; 76], ..a.clone() };
        assert_eq!(OutputShare::decode(&a.encode()).unwrap(), a);
        let out = open_at_analyst(&a, &b).unwrap();
        assert_eq!(out.rows[0].counts, [1; 4]);
        assert_eq!(out.rows[0].suppressed, [true; 4]);
        b.session_id = [2; 16];
        assert!(matches!(open_at_analyst(&a, &b), Err(Error::ShareMismatch(_))));
        assert!(matches!(open_at_analyst(&a, &a), Err(Error::ShareMismatch(_))));
        let enc = a.encode();
        assert!(OutputShare::decode(&enc[..enc.len() - 1]).is_err());
    }
}
