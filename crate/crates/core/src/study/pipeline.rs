//! The three evaluation strategies, from partner-side preparation to output shares.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::oblivious::circuits::{concat_slices, gather_slices, values_from_slices};
use crate::oblivious::{ObliviousTable, Party};
use crate::relational::{
    add_cubes, apply_exclusion, collapse_patient_years, data_cube, densify_cube, record_schema, rollup,
    suppress_and_reveal, CubeDomain, DenseCube, Dimension, PlainCube,
};
use crate::sharing::{share_table, ShareFile};
use crate::study::batch::partition;
use crate::study::config::{Mode, StudyConfig};
use crate::study::output::{output_layout, OutputShare};
use crate::study::record::{CodedRecord, RECORD_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TableKind {
    /// Patient-year records of one batch.
    Records = 1,
    /// Padded cube of a partner's single-site patients.
    SingleSiteCube = 2,
    /// Padded cube of all of a partner's patients.
    SiteCube = 3,
}

/// `kind << 24 | batch`.
pub fn table_id(kind: TableKind, batch: u32) -> u32 {
    (kind as u32) << 24 | batch
}

/// Tables every partner uploads under `config`, in upload order.
pub fn expected_table_ids(config: &StudyConfig) -> Vec<u32> {
    let batches = (0..config.batch_count).map(|b| table_id(TableKind::Records, b));
    match config.mode {
        Mode::Full => batches.collect(),
        Mode::Multisite => batches.chain([table_id(TableKind::SingleSiteCube, 0)]).collect(),
        Mode::AggregateOnly => vec![table_id(TableKind::SiteCube, 0)],
    }
}

/// One row per (token, year) at a single site: flags ORed, strata of the first
/// row, excluded patient-years dropped.
pub fn local_dedup(records: &[CodedRecord]) -> Vec<CodedRecord> {
    let mut groups: BTreeMap<(u64, u8), CodedRecord> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_dummy) {
        groups
            .entry((r.token, r.year))
            .and_modify(|g| {
                g.denominator |= r.denominator;
                g.numerator |= r.numerator;
                g.excluded |= r.excluded;
                g.multi_site |= r.multi_site;
            })
            .or_insert(*r);
    }
    groups.into_values().filter(|r| !r.excluded).collect()
}

/// Plaintext cube over already deduplicated records.
pub fn local_cube(records: &[CodedRecord], domain: CubeDomain) -> Result<PlainCube> {
    let mut cube = PlainCube::new(domain);
    for r in records {
        let (n, d, m) = (r.numerator as u32, r.denominator as u32, r.multi_site as u32);
        cube.add(&r.strata(), [n, d, n & m, d & m])?;
    }
    Ok(cube)
}

/// The share files a data partner sends to each compute party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartnerUpload {
    pub first: Vec<ShareFile>,
    pub second: Vec<ShareFile>,
}

/// Partner-side preparation for the configured mode.
///
/// Full mode shares every record, batched by token. Multisite mode shares only
/// records flagged multi-site, plus a padded cube of the rest. Aggregate-only mode
/// shares a padded cube of everything after local exclusion and deduplication.
pub fn prepare_upload<R: RngCore + CryptoRng>(
    config: &StudyConfig,
    records: &[CodedRecord],
    rng: &mut R,
) -> Result<PartnerUpload> {
    let domain = CubeDomain::new(config.years.len())?;
    if let Some(r) = records.iter().find(|r| !domain.contains(&r.strata())) {
        return Err(Error::InvalidArgument(format!("record for token {:016x} lies outside the study domain", r.token)));
    }
    let mut up = PartnerUpload { first: Vec::new(), second: Vec::new() };
    let mut push = |(a, b): (ShareFile, ShareFile)| {
        up.first.push(a);
        up.second.push(b);
    };
    let share_batches = |rows: &[CodedRecord], rng: &mut R| -> Result<Vec<(ShareFile, ShareFile)>> {
        partition(rows, |r| r.token, config.batch_count)
            .iter()
            .enumerate()
            .map(|(b, rows)| share_table(rows, table_id(TableKind::Records, b as u32), RECORD_BITS, rng))
            .collect()
    };
    match config.mode {
        Mode::Full => share_batches(records, rng)?.into_iter().for_each(&mut push),
        Mode::Multisite => {
            let (multi, single): (Vec<CodedRecord>, Vec<CodedRecord>) = records.iter().partition(|r| r.multi_site);
            share_batches(&multi, rng)?.into_iter().for_each(&mut push);
            let cube = local_cube(&local_dedup(&single), domain)?;
            push(crate::relational::share_plain_cube(&cube, table_id(TableKind::SingleSiteCube, 0), rng)?);
        }
        Mode::AggregateOnly => {
            let cube = local_cube(&local_dedup(records), domain)?;
            push(crate::relational::share_plain_cube(&cube, table_id(TableKind::SiteCube, 0), rng)?);
        }
    }
    Ok(up)
}

/// Share files received by one compute party, keyed by (partner id, table id).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Uploads {
    tables: BTreeMap<(u32, u32), ShareFile>,
}

impl Uploads {
    pub fn new() -> Self {
        Uploads::default()
    }

    pub fn insert(&mut self, partner: u32, file: ShareFile) -> Result<()> {
        file.check_payload()?;
        let key = (partner, file.table_id);
        if self.tables.contains_key(&key) {
            return Err(Error::Protocol(format!("partner {partner} sent table {:#x} twice", file.table_id)));
        }
        self.tables.insert(key, file);
        Ok(())
    }

    pub fn partners(&self) -> BTreeSet<u32> {
        self.tables.keys().map(|k| k.0).collect()
    }

    pub fn get(&self, partner: u32, table_id: u32) -> Result<&ShareFile> {
        self.tables
            .get(&(partner, table_id))
            .ok_or_else(|| Error::Protocol(format!("partner {partner} has no table {table_id:#x}")))
    }

    /// Whether this partner has sent every table the mode needs.
    pub fn has_all(&self, partner: u32, config: &StudyConfig) -> bool {
        expected_table_ids(config).iter().all(|t| self.tables.contains_key(&(partner, *t)))
    }

    /// Checks that exactly `config.partners` partners uploaded exactly the expected
    /// tables, all carrying `share_index`.
    pub fn check_complete(&self, config: &StudyConfig, share_index: u8) -> Result<()> {
        let partners = self.partners();
        if partners.len() != config.partners as usize {
            return Err(Error::Protocol(format!("{} partners uploaded, {} expected", partners.len(), config.partners)));
        }
        let want: BTreeSet<u32> = expected_table_ids(config).into_iter().collect();
        for p in partners {
            let got: BTreeSet<u32> = self.tables.keys().filter(|k| k.0 == p).map(|k| k.1).collect();
            if got != want {
                return Err(Error::Protocol(format!("partner {p} uploaded the wrong set of tables")));
            }
        }
        if let Some(f) = self.tables.values().find(|f| f.share_index != share_index) {
            return Err(Error::ShareMismatch(format!("table {:#x} carries share index {}", f.table_id, f.share_index)));
        }
        Ok(())
    }

    /// Digest of the public metadata, equal at both compute parties when they hold
    /// matching uploads.
    pub fn metadata_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for ((p, t), f) in &self.tables {
            h.update(p.to_be_bytes());
            h.update(t.to_be_bytes());
            h.update(f.row_count.to_be_bytes());
            h.update(f.row_width_bits.to_be_bytes());
        }
        h.finalize().into()
    }
}

/// Cost of one named pipeline step, summed over every time it ran.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepCost {
    pub name: String,
    pub elapsed: Duration,
    pub bytes_sent: u64,
    pub and_gates: u64,
    pub rounds: u64,
    pub compare_exchanges: u64,
}

/// Per-step costs and shape counters of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepLog {
    pub steps: Vec<StepCost>,
    /// Rows fed to the secure deduplication sort, over all batches.
    pub secure_input_rows: u64,
}

impl StepLog {
    pub fn step<T>(&mut self, name: &str, party: &mut Party, f: impl FnOnce(&mut Party) -> Result<T>) -> Result<T> {
        let before = party.tape().clone();
        let start = Instant::now();
        let out = f(party)?;
        let after = party.tape();
        let idx = match self.steps.iter().position(|s| s.name == name) {
            Some(i) => i,
            None => {
                self.steps.push(StepCost { name: name.to_string(), ..Default::default() });
                self.steps.len() - 1
            }
        };
        let s = &mut self.steps[idx];
        s.elapsed += start.elapsed();
        s.bytes_sent += after.bytes_sent - before.bytes_sent;
        s.and_gates += after.and_gates - before.and_gates;
        s.rounds += after.rounds - before.rounds;
        s.compare_exchanges += after.compare_exchanges - before.compare_exchanges;
        Ok(out)
    }
}

fn batch_table(uploads: &Uploads, batch: u32) -> Result<ObliviousTable> {
    let mut table = ObliviousTable::empty(record_schema());
    for p in uploads.partners() {
        let f = uploads.get(p, table_id(TableKind::Records, batch))?;
        table.append(&ObliviousTable::from_share_file(record_schema(), f, true)?)?;
    }
    Ok(table)
}

/// Secure cube over the uploaded record batches: per batch, deduplicate,
/// exclude, aggregate and densify; then add the batch cubes.
fn secure_record_cube(party: &mut Party, config: &StudyConfig, uploads: &Uploads, log: &mut StepLog) -> Result<DenseCube> {
    let domain = CubeDomain::new(config.years.len())?;
    let mut total = DenseCube::zero(domain);
    for b in 0..config.batch_count {
        let table = log.step("ingest", party, |_| batch_table(uploads, b))?;
        log.secure_input_rows += table.len() as u64;
        let collapsed = log.step("dedup", party, |p| collapse_patient_years(p, &table))?;
        let kept = log.step("exclusion", party, |p| apply_exclusion(p, &collapsed))?;
        let cells = log.step("cube", party, |p| data_cube(p, &kept))?;
        let dense = log.step("densify", party, |p| densify_cube(p, &cells, domain))?;
        total = log.step("add", party, |p| add_cubes(p, &total, &dense))?;
    }
    Ok(total)
}

fn add_partner_cubes(
    party: &mut Party,
    uploads: &Uploads,
    kind: TableKind,
    mut total: DenseCube,
    log: &mut StepLog,
) -> Result<DenseCube> {
    let domain = total.domain();
    for p in uploads.partners() {
        let cube = log.step("ingest", party, |_| DenseCube::from_share_file(domain, uploads.get(p, table_id(kind, 0))?))?;
        total = log.step("add", party, |pt| add_cubes(pt, &total, &cube))?;
    }
    Ok(total)
}

/// Rolls the cube up along every dimension, applies suppression, and returns this
/// party's output share.
pub fn release_output(
    party: &mut Party,
    config: &StudyConfig,
    cube: &DenseCube,
    session_id: [u8; 16],
    log: &mut StepLog,
) -> Result<OutputShare> {
    log.step("rollup+reveal", party, |p| {
        let years = config.years.len();
        let tables: Vec<_> = Dimension::ALL.iter().map(|&d| rollup(p, cube, d)).collect::<Result<_>>()?;
        // lanes of `all` are ordered [dimension][counter][row]; releases want [dimension][row][counter]
        let words: Vec<&[crate::oblivious::Lanes]> =
            tables.iter().flat_map(|t| t.counters.iter().map(|c| c.as_slice())).collect();
        let all = concat_slices(&words);
        let mut order = Vec::with_capacity(4 * output_layout(years).len());
        let mut base = 0;
        for t in &tables {
            let rows = t.rows.len();
            for r in 0..rows {
                for k in 0..4 {
                    order.push(base + k * rows + r);
                }
            }
            base += 4 * rows;
        }
        let released = suppress_and_reveal(p, &gather_slices(&all, &order), config.suppression_threshold)?;
        Ok(OutputShare {
            share_index: p.index().share_index(),
            session_id,
            years: config.years.clone(),
            values: values_from_slices(&released.values).into_iter().map(|v| v as u32).collect(),
            flags: released.suppressed.iter().collect(),
        })
    })
}

/// Every record goes through the secure pipeline.
pub fn run_full_protocol(
    party: &mut Party,
    config: &StudyConfig,
    uploads: &Uploads,
    session_id: [u8; 16],
    log: &mut StepLog,
) -> Result<OutputShare> {
    let cube = secure_record_cube(party, config, uploads, log)?;
    release_output(party, config, &cube, session_id, log)
}

/// Only multi-site records go through the secure pipeline; partners' padded
/// single-site cubes are added afterwards.
pub fn run_multisite_optimized(
    party: &mut Party,
    config: &StudyConfig,
    uploads: &Uploads,
    session_id: [u8; 16],
    log: &mut StepLog,
) -> Result<OutputShare> {
    let secure = secure_record_cube(party, config, uploads, log)?;
    let cube = add_partner_cubes(party, uploads, TableKind::SingleSiteCube, secure, log)?;
    release_output(party, config, &cube, session_id, log)
}

/// Adds one padded cube per partner. No record-level work and no linkage.
pub fn run_aggregate_only(
    party: &mut Party,
    config: &StudyConfig,
    uploads: &Uploads,
    session_id: [u8; 16],
    log: &mut StepLog,
) -> Result<OutputShare> {
    let zero = DenseCube::zero(CubeDomain::new(config.years.len())?);
    let cube = add_partner_cubes(party, uploads, TableKind::SiteCube, zero, log)?;
    release_output(party, config, &cube, session_id, log)
}

/// Checks the uploads, confirms with the peer that both hold matching metadata,
/// and runs the configured mode.
pub fn run_study(
    party: &mut Party,
    config: &StudyConfig,
    uploads: &Uploads,
    session_id: [u8; 16],
    log: &mut StepLog,
) -> Result<OutputShare> {
    uploads.check_complete(config, party.index().share_index())?;
    let mine = uploads.metadata_digest();
    let theirs = party.exchange_public(&mine)?;
    if theirs != mine {
        return Err(Error::Protocol("the compute parties received different uploads".into()));
    }
    match config.mode {
        Mode::Full => run_full_protocol(party, config, uploads, session_id, log),
        Mode::Multisite => run_multisite_optimized(party, config, uploads, session_id, log),
        Mode::AggregateOnly => run_aggregate_only(party, config, uploads, session_id, log),
    }
}
