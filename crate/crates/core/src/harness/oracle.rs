//! Plaintext reference evaluation of the study.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::csvio::{read_input_file, InputRow, RawCsvRow};
use crate::relational::Dimension;
use crate::study::output::output_layout;
use crate::study::record::{encode_record, CodedRecord};
use crate::study::{StudyConfig, StudyOutput};

/// Encodes a site file, dropping ineligible rows. Malformed rows are reported
/// with their line number.
pub fn encode_site(rows: &[InputRow], years: &[u16]) -> Result<Vec<CodedRecord>> {
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        match encode_record(&r.row, years) {
            Ok(Some(c)) => out.push(c),
            Ok(None) => {}
            Err(e) => return Err(Error::Csv { line: r.line, message: e.to_string() }),
        }
    }
    Ok(out)
}

/// [`encode_site`] for rows without file positions; lines count from 2.
pub fn encode_rows(rows: &[RawCsvRow], years: &[u16]) -> Result<Vec<CodedRecord>> {
    let lined: Vec<InputRow> =
        rows.iter().enumerate().map(|(i, r)| InputRow { line: i as u64 + 2, row: r.clone() }).collect();
    encode_site(&lined, years)
}

pub fn load_site(path: &Path, years: &[u16]) -> Result<Vec<CodedRecord>> {
    encode_site(&read_input_file(path)?, years)
}

/// How patient-years are matched before counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linkage {
    /// One patient-year per token across all sites.
    CrossSite,
    /// Each site counts its own patients; nobody is matched across sites.
    PerSite,
}

#[derive(Clone, Copy)]
struct Group {
    age: u8,
    sex: u8,
    race: u8,
    ethnicity: u8,
    numerator: bool,
    denominator: bool,
    excluded: bool,
    multi_site: bool,
}

/// Unsuppressed counts in [`output_layout`] order.
pub fn oracle_counts(sites: &[Vec<CodedRecord>], years: usize, linkage: Linkage) -> Vec<[u64; 4]> {
    let mut groups: HashMap<(usize, u64, u8), Group> = HashMap::new();
    let mut order = Vec::new();
    for (s, records) in sites.iter().enumerate() {
        let site_key = if linkage == Linkage::PerSite { s } else { 0 };
        for r in records {
            let key = (site_key, r.token, r.year);
            match groups.get_mut(&key) {
                Some(g) => {
                    g.numerator |= r.numerator;
                    g.denominator |= r.denominator;
                    g.excluded |= r.excluded;
                    g.multi_site |= r.multi_site;
                }
                None => {
                    order.push(key);
                    groups.insert(
                        key,
                        Group {
                            age: r.age_band,
                            sex: r.sex,
                            race: r.race,
                            ethnicity: r.ethnicity,
                            numerator: r.numerator,
                            denominator: r.denominator,
                            excluded: r.excluded,
                            multi_site: r.multi_site,
                        },
                    );
                }
            }
        }
    }

    let layout = output_layout(years);
    let position: HashMap<(Dimension, usize, usize), usize> =
        layout.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut counts = vec![[0u64; 4]; layout.len()];
    for key in &order {
        let g = groups[key];
        if g.excluded {
            continue;
        }
        let year = key.2 as usize;
        let contrib = [
            g.numerator as u64,
            g.denominator as u64,
            (g.numerator && g.multi_site) as u64,
            (g.denominator && g.multi_site) as u64,
        ];
        let cats = [
            (Dimension::Age, g.age),
            (Dimension::Sex, g.sex),
            (Dimension::Race, g.race),
            (Dimension::Ethnicity, g.ethnicity),
        ];
        for (d, c) in cats {
            let row = &mut counts[position[&(d, year, c as usize)]];
            for k in 0..4 {
                row[k] += contrib[k];
            }
        }
    }
    counts
}

/// Encode, match patient-years across sites, drop excluded ones, count, roll up
/// and suppress, all in the clear.
pub fn oracle_run(sites: &[Vec<CodedRecord>], config: &StudyConfig) -> Result<StudyOutput> {
    let counts = oracle_counts(sites, config.years.len(), Linkage::CrossSite);
    StudyOutput::from_counts(&config.years, &counts, config.suppression_threshold)
}

/// [`oracle_run`] over input CSV files.
pub fn oracle_files(paths: &[impl AsRef<Path>], config: &StudyConfig) -> Result<StudyOutput> {
    let sites: Vec<Vec<CodedRecord>> =
        paths.iter().map(|p| load_site(p.as_ref(), &config.years)).collect::<Result<_>>()?;
    oracle_run(&sites, config)
}
