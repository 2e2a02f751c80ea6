//! Site-local encoding of input rows into fixed-width patient-year records.

use crate::error::{Error, Result};
use crate::harness::csvio::RawCsvRow;
use crate::relational::{record_schema, Strata};
use crate::sharing::{put_bits, take_bits, FixedWidthRow};

pub const RECORD_BITS: u16 = 81;

pub const AGE_BAND_LABELS: [&str; 7] = ["18-28", "29-39", "40-50", "51-61", "62-72", "73-83", "84-100"];
pub const SEX_LABELS: [&str; 3] = ["Female", "Male", "Unknown"];
pub const RACE_LABELS: [&str; 6] =
    ["American Indian", "Asian", "Black", "Native Hawaiian or Pacific Islander", "White", "Unknown"];
pub const ETHNICITY_LABELS: [&str; 3] = ["Hispanic", "Non-Hispanic", "Unknown"];

/// One patient-year row in cleartext.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CodedRecord {
    pub token: u64,
    pub year: u8,
    pub age_band: u8,
    pub sex: u8,
    pub race: u8,
    pub ethnicity: u8,
    pub denominator: bool,
    pub numerator: bool,
    pub excluded: bool,
    pub multi_site: bool,
    pub is_dummy: bool,
}

impl CodedRecord {
    pub fn strata(&self) -> Strata {
        Strata { year: self.year, age: self.age_band, sex: self.sex, race: self.race, ethnicity: self.ethnicity }
    }

    /// Field values in [`record_schema`] order.
    pub fn values(&self) -> Vec<u64> {
        vec![
            self.token,
            self.year as u64,
            self.age_band as u64,
            self.sex as u64,
            self.race as u64,
            self.ethnicity as u64,
            self.denominator as u64,
            self.numerator as u64,
            self.excluded as u64,
            self.multi_site as u64,
        ]
    }

    pub fn from_bits(bytes: &[u8]) -> Self {
        let mut pos = 0;
        let mut next = |w| take_bits(bytes, &mut pos, w);
        CodedRecord {
            token: next(64),
            year: next(2) as u8,
            age_band: next(3) as u8,
            sex: next(2) as u8,
            race: next(3) as u8,
            ethnicity: next(2) as u8,
            denominator: next(1) == 1,
            numerator: next(1) == 1,
            excluded: next(1) == 1,
            multi_site: next(1) == 1,
            is_dummy: next(1) == 1,
        }
    }
}

impl FixedWidthRow for CodedRecord {
    fn width_bits(&self) -> u16 {
        RECORD_BITS
    }

    fn write_bits(&self, out: &mut [u8]) {
        let mut pos = 0;
        for (v, f) in self.values().into_iter().zip(record_schema().fields()) {
            put_bits(out, &mut pos, v, f.width);
        }
        put_bits(out, &mut pos, self.is_dummy as u64, 1);
    }
}

/// Age band of an age in years, or `None` outside 18 to 100.
pub fn age_band(age: u32) -> Option<u8> {
    match age {
        18..=28 => Some(0),
        29..=39 => Some(1),
        40..=50 => Some(2),
        51..=61 => Some(3),
        62..=72 => Some(4),
        73..=83 => Some(5),
        84..=100 => Some(6),
        _ => None,
    }
}

fn category(labels: &[&str], value: &str) -> u8 {
    let unknown = labels.len() - 1;
    labels[..unknown].iter().position(|l| *l == value.trim()).unwrap_or(unknown) as u8
}

pub fn sex_code(s: &str) -> u8 {
    category(&SEX_LABELS, s)
}

pub fn race_code(s: &str) -> u8 {
    category(&RACE_LABELS, s)
}

pub fn ethnicity_code(s: &str) -> u8 {
    category(&ETHNICITY_LABELS, s)
}

pub fn parse_token(s: &str) -> Result<u64> {
    let s = s.trim();
    if s.is_empty() || s.len() > 16 {
        return Err(Error::InvalidArgument(format!("participant token {s:?} is not 1 to 16 hex digits")));
    }
    u64::from_str_radix(s, 16).map_err(|_| Error::InvalidArgument(format!("participant token {s:?} is not hex")))
}

pub fn format_token(token: u64) -> String {
    format!("{token:016x}")
}

fn flag(name: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::InvalidArgument(format!("{name} must be 0 or 1, got {other:?}"))),
    }
}

fn number(name: &str, s: &str) -> Result<u32> {
    s.trim().parse().map_err(|_| Error::InvalidArgument(format!("{name} must be a non-negative integer, got {s:?}")))
}

/// Blood pressure component; empty means no measurement.
fn pressure(name: &str, s: &str) -> Result<Option<u32>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        number(name, s).map(Some)
    }
}

/// Encodes one input row.
///
/// Returns `Ok(None)` for rows that are not eligible at all (non-ambulatory, age
/// outside 18 to 100, or a year outside the study). Unknown demographic strings
/// map to the Unknown code; malformed numbers and flags are errors.
pub fn encode_record(raw: &RawCsvRow, years: &[u16]) -> Result<Option<CodedRecord>> {
    let token = parse_token(&raw.participant_token)?;
    let year: u16 = raw
        .study_year
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("study_year must be a calendar year, got {:?}", raw.study_year)))?;
    let age = number("age", &raw.age)?;
    let htn = flag("htn_dx", &raw.htn_dx)?;
    let sbp = pressure("sbp", &raw.sbp)?;
    let dbp = pressure("dbp", &raw.dbp)?;
    let ambulatory = flag("ambulatory", &raw.ambulatory)?;
    let excluded = flag("deceased", &raw.deceased)?
        | flag("pregnant", &raw.pregnant)?
        | flag("renal", &raw.renal)?
        | flag("transplant", &raw.transplant)?
        | flag("inpatient", &raw.inpatient)?;
    let multi_site = flag("multi_site", &raw.multi_site)?;

    let (Some(year_index), Some(band), true) = (years.iter().position(|&y| y == year), age_band(age), ambulatory) else {
        return Ok(None);
    };
    let uncontrolled = sbp.is_some_and(|v| v > 140) || dbp.is_some_and(|v| v > 90);
    Ok(Some(CodedRecord {
        token,
        year: year_index as u8,
        age_band: band,
        sex: sex_code(&raw.sex),
        race: race_code(&raw.race),
        ethnicity: ethnicity_code(&raw.ethnicity),
        denominator: htn,
        numerator: htn && uncontrolled,
        excluded,
        multi_site,
        is_dummy: false,
    }))
}
