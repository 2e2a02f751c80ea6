//! Deterministic synthetic cohorts, one input CSV per site.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::harness::csvio::{write_input, RawCsvRow};
use crate::study::record::{format_token, ETHNICITY_LABELS, RACE_LABELS, SEX_LABELS};

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub sites: usize,
    pub patients_per_site: usize,
    /// Share of each site's patients also seen at another site.
    pub overlap_fraction: f64,
    pub years: Vec<u16>,
    pub htn_prevalence: f64,
    /// Share of hypertensive patient-years with a reading above 140/90.
    pub uncontrolled_fraction: f64,
    /// Probability that a row carries at least one exclusion flag, roughly.
    pub exclusion_rate: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            sites: 3,
            patients_per_site: 1000,
            overlap_fraction: 0.072,
            years: vec![2018, 2019, 2020],
            htn_prevalence: 0.35,
            uncontrolled_fraction: 0.4,
            exclusion_rate: 0.05,
            seed: 1,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, v) in [
            ("overlap_fraction", self.overlap_fraction),
            ("htn_prevalence", self.htn_prevalence),
            ("uncontrolled_fraction", self.uncontrolled_fraction),
            ("exclusion_rate", self.exclusion_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.sites == 0 {
            return bad("at least one site is needed".into());
        }
        if self.sites == 1 && self.overlap_fraction > 0.0 {
            return bad("overlap needs at least two sites".into());
        }
        if self.years.is_empty() || self.years.len() > 3 {
            return bad(format!("1 to 3 years are supported, got {}", self.years.len()));
        }
        Ok(())
    }

    /// Target number of each site's patients shared with another site.
    pub fn overlap_target(&self) -> usize {
        (self.overlap_fraction * self.patients_per_site as f64).round() as usize
    }

    /// Patients shared across each pair of neighbouring sites on the ring.
    fn edge_size(&self) -> usize {
        match self.sites {
            0 | 1 => 0,
            2 => self.overlap_target(),
            _ => self.overlap_target() / 2,
        }
    }
}

#[derive(Clone, Debug)]
struct Patient {
    token: u64,
    age: u32,
    sex: &'static str,
    race: &'static str,
    ethnicity: &'static str,
    ambulatory: bool,
}

fn pick<'a>(rng: &mut ChaCha20Rng, labels: &[&'a str], weights: &[f64]) -> &'a str {
    let mut x = rng.gen::<f64>() * weights.iter().sum::<f64>();
    for (l, w) in labels.iter().zip(weights) {
        if x < *w {
            return l;
        }
        x -= w;
    }
    labels[labels.len() - 1]
}

fn new_patient(rng: &mut ChaCha20Rng, used: &mut HashSet<u64>) -> Patient {
    let token = loop {
        let t = rng.gen::<u64>();
        if used.insert(t) {
            break t;
        }
    };
    let age = if rng.gen_bool(0.02) { rng.gen_range(5..18) } else { rng.gen_range(18..=99) };
    Patient {
        token,
        age,
        sex: pick(rng, &SEX_LABELS, &[0.52, 0.46, 0.02]),
        race: pick(rng, &RACE_LABELS, &[0.01, 0.06, 0.2, 0.01, 0.6, 0.12]),
        ethnicity: pick(rng, &ETHNICITY_LABELS, &[0.15, 0.78, 0.07]),
        ambulatory: !rng.gen_bool(0.02),
    }
}

/// Generates one row list per site. Every patient appears in every year at each of
/// their sites, one year older each year.
pub fn generate_synthetic(p: &GenParams) -> Result<Vec<Vec<RawCsvRow>>> {
    p.validate()?;
    let edge = p.edge_size();
    let links = if p.sites == 2 { 1 } else if p.sites > 2 { p.sites } else { 0 };
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let mut used = HashSet::new();

    let mut members: Vec<Vec<Patient>> = vec![Vec::new(); p.sites];
    let mut shared: HashSet<u64> = HashSet::new();
    for e in 0..links {
        let (a, b) = (e, (e + 1) % p.sites);
        for _ in 0..edge {
            let pt = new_patient(&mut rng, &mut used);
            shared.insert(pt.token);
            members[a].push(pt.clone());
            members[b].push(pt);
        }
    }
    for m in members.iter_mut() {
        while m.len() < p.patients_per_site {
            m.push(new_patient(&mut rng, &mut used));
        }
    }

    let mut out = Vec::with_capacity(p.sites);
    for (s, patients) in members.iter().enumerate() {
        let mut rows = Vec::with_capacity(patients.len() * p.years.len());
        for pt in patients {
            for (yi, &year) in p.years.iter().enumerate() {
                rows.push(site_row(&mut rng, p, s, pt, yi, year, shared.contains(&pt.token)));
            }
        }
        out.push(rows);
    }
    Ok(out)
}

fn site_row(
    rng: &mut ChaCha20Rng,
    p: &GenParams,
    site: usize,
    pt: &Patient,
    year_index: usize,
    year: u16,
    multi_site: bool,
) -> RawCsvRow {
    let htn = rng.gen_bool(p.htn_prevalence);
    let (sbp, dbp) = if rng.gen_bool(0.05) {
        (String::new(), String::new())
    } else if htn && rng.gen_bool(p.uncontrolled_fraction) {
        if rng.gen_bool(0.5) {
            (rng.gen_range(141..=190u32).to_string(), rng.gen_range(60..=100u32).to_string())
        } else {
            (rng.gen_range(110..=150u32).to_string(), rng.gen_range(91..=115u32).to_string())
        }
    } else {
        (rng.gen_range(95..=140u32).to_string(), rng.gen_range(55..=90u32).to_string())
    };
    let flag_rate = 1.0 - (1.0 - p.exclusion_rate).powf(0.2);
    let mut flag = || if rng.gen_bool(flag_rate) { "1" } else { "0" }.to_string();
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    RawCsvRow {
        participant_token: format_token(pt.token),
        site_id: format!("site{}", site + 1),
        study_year: year.to_string(),
        age: (pt.age + year_index as u32).to_string(),
        sex: pt.sex.to_string(),
        race: pt.race.to_string(),
        ethnicity: pt.ethnicity.to_string(),
        htn_dx: b(htn),
        sbp,
        dbp,
        ambulatory: b(pt.ambulatory),
        deceased: flag(),
        pregnant: flag(),
        renal: flag(),
        transplant: flag(),
        inpatient: flag(),
        multi_site: b(multi_site),
    }
}

/// Writes `site1.csv`, `site2.csv`, ... into `dir` and returns their paths.
pub fn write_sites(dir: &Path, sites: &[Vec<RawCsvRow>]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (i, rows) in sites.iter().enumerate() {
        let path = dir.join(format!("site{}.csv", i + 1));
        write_input(rows, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        paths.push(path);
    }
    Ok(paths)
}
