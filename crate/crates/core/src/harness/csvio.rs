//! Input CSV files: one row per (patient, site, year).

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const INPUT_HEADER: [&str; 17] = [
    "participant_token",
    "site_id",
    "study_year",
    "age",
    "sex",
    "race",
    "ethnicity",
    "htn_dx",
    "sbp",
    "dbp",
    "ambulatory",
    "deceased",
    "pregnant",
    "renal",
    "transplant",
    "inpatient",
    "multi_site",
];

/// One input row, fields as written in the file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawCsvRow {
    pub participant_token: String,
    pub site_id: String,
    pub study_year: String,
    pub age: String,
    pub sex: String,
    pub race: String,
    pub ethnicity: String,
    pub htn_dx: String,
    pub sbp: String,
    pub dbp: String,
    pub ambulatory: String,
    pub deceased: String,
    pub pregnant: String,
    pub renal: String,
    pub transplant: String,
    pub inpatient: String,
    pub multi_site: String,
}

impl RawCsvRow {
    fn fields(&self) -> [&str; 17] {
        [
            &self.participant_token,
            &self.site_id,
            &self.study_year,
            &self.age,
            &self.sex,
            &self.race,
            &self.ethnicity,
            &self.htn_dx,
            &self.sbp,
            &self.dbp,
            &self.ambulatory,
            &self.deceased,
            &self.pregnant,
            &self.renal,
            &self.transplant,
            &self.inpatient,
            &self.multi_site,
        ]
    }

    fn from_fields(f: &csv::StringRecord) -> Self {
        let g = |i: usize| f.get(i).unwrap_or_default().to_string();
        RawCsvRow {
            participant_token: g(0),
            site_id: g(1),
            study_year: g(2),
            age: g(3),
            sex: g(4),
            race: g(5),
            ethnicity: g(6),
            htn_dx: g(7),
            sbp: g(8),
            dbp: g(9),
            ambulatory: g(10),
            deceased: g(11),
            pregnant: g(12),
            renal: g(13),
            transplant: g(14),
            inpatient: g(15),
            multi_site: g(16),
        }
    }
}

/// A parsed row and the file line it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputRow {
    pub line: u64,
    pub row: RawCsvRow,
}

/// Reads an input file. The header must match [`INPUT_HEADER`] exactly.
pub fn read_input<R: Read>(reader: R) -> Result<Vec<InputRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(INPUT_HEADER.iter().copied()) {
        return Err(Error::Csv { line: 1, message: format!("header must be exactly {}", INPUT_HEADER.join(",")) });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(InputRow { line, row: RawCsvRow::from_fields(&rec) });
    }
    Ok(out)
}

pub fn read_input_file(path: &std::path::Path) -> Result<Vec<InputRow>> {
    read_input(std::fs::File::open(path)?)
}

pub fn write_input<W: Write>(rows: &[RawCsvRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(INPUT_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn render_input(rows: &[RawCsvRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_input(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::InvalidArgument(e.to_string()))
}
