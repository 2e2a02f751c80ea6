//! Per-step cost reports over local runs.

use std::fmt::Write as _;

use crate::error::Result;
use crate::harness::duo::run_duo;
use crate::harness::generate::{generate_synthetic, GenParams};
use crate::harness::oracle::encode_rows;
use crate::study::{Mode, StudyConfig};

pub const BENCH_HEADER: &str =
    "mode,years,patients_per_site,step,millis,bytes_sent,triples,rounds,compare_exchanges,secure_rows";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: Mode,
    pub years: usize,
    pub patients_per_site: usize,
    pub step: String,
    pub millis: f64,
    /// Bytes the first party sent to the second; on the `total` row, every byte
    /// on every connection of the run.
    pub bytes_sent: u64,
    pub triples: u64,
    pub rounds: u64,
    pub compare_exchanges: u64,
    pub secure_rows: u64,
}

#[derive(Clone, Debug)]
pub struct BenchParams {
    pub modes: Vec<Mode>,
    pub years: Vec<usize>,
    pub sizes: Vec<usize>,
    pub sites: usize,
    pub overlap_fraction: f64,
    pub batch_count: u32,
    pub seed: u64,
}

/// Runs every (mode, years, size) combination and reports each pipeline step plus
/// a `total` row per run.
pub fn bench(p: &BenchParams) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &mode in &p.modes {
        for &years in &p.years {
            let year_list: Vec<u16> = (0..years as u16).map(|i| 2018 + i).collect();
            for &size in &p.sizes {
                let gen = GenParams {
                    sites: p.sites,
                    patients_per_site: size,
                    overlap_fraction: p.overlap_fraction,
                    years: year_list.clone(),
                    seed: p.seed,
                    ..GenParams::default()
                };
                let mut config = StudyConfig::new(year_list.clone(), mode)?;
                config.batch_count = p.batch_count;
                let sites: Vec<_> =
                    generate_synthetic(&gen)?.iter().map(|s| encode_rows(s, &year_list)).collect::<Result<_>>()?;
                let run = run_duo(&config, &sites, p.seed)?;
                let first = &run.parties[0];
                for s in &first.log.steps {
                    rows.push(BenchRow {
                        mode,
                        years,
                        patients_per_site: size,
                        step: s.name.clone(),
                        millis: s.elapsed.as_secs_f64() * 1e3,
                        bytes_sent: s.bytes_sent,
                        triples: s.and_gates,
                        rounds: s.rounds,
                        compare_exchanges: s.compare_exchanges,
                        secure_rows: 0,
                    });
                }
                rows.push(BenchRow {
                    mode,
                    years,
                    patients_per_site: size,
                    step: "total".into(),
                    millis: run.elapsed.as_secs_f64() * 1e3,
                    bytes_sent: run.wire_bytes(),
                    triples: first.tape.and_gates,
                    rounds: first.tape.rounds,
                    compare_exchanges: first.tape.compare_exchanges,
                    secure_rows: first.log.secure_input_rows,
                });
            }
        }
    }
    Ok(rows)
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{},{},{},{},{}",
            r.mode, r.years, r.patients_per_site, r.step, r.millis, r.bytes_sent, r.triples, r.rounds,
            r.compare_exchanges, r.secure_rows
        );
    }
    out
}
