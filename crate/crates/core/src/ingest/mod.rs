//! Real-time staging ingest.
//!
//! Every CCD owns one small ingest table for the current night. A batch is
//! first checked in a throw-away in-memory staging area, then appended to its
//! CCD's table under that table's lock. Each image arrives twice (servers A
//! and B); whichever copy lands second is acknowledged as a duplicate. Staging
//! keeps no log: a crashed stage is undone by dropping the uncommitted tail
//! and replaying the cached input batch.

mod associate;
mod batch_io;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use associate::{
    Alert, AlertType, AssociationConfig, AssociationResult, Associator, ObjectTableState,
};
pub use batch_io::{parse_batch_ndjson, write_batch_ndjson, BatchHeader};
pub use validate::{ValidationReport, Violation, ViolationKind};

use crate::catalog::RowFilter;
use crate::error::{Error, Result};
use crate::index::{IndexConfig, TrixelId};
use crate::types::{CcdId, SourceRecord, VisitId};

/// Wall-clock and cadence budgets the system is held to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// Seconds from image arrival to alert.
    pub alert_latency_budget: f64,
    /// Seconds to validate, stage and index one CCD image.
    pub per_image_ingest_budget: f64,
    /// Seconds between visits.
    pub visit_cadence: f64,
    pub ccd_count: u16,
    /// Seconds of observing per night.
    pub night_length: f64,
    /// MB/s at full scale; informative only at desk scale.
    pub target_ingest_rate: f64,
    pub releases_per_year: u32,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            alert_latency_budget: 60.0,
            per_image_ingest_budget: 3.0,
            visit_cadence: 13.0,
            ccd_count: 200,
            night_length: 10.0 * 3600.0,
            target_ingest_rate: 35.0,
            releases_per_year: 2,
        }
    }
}

impl BudgetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alert_latency_budget", self.alert_latency_budget),
            ("per_image_ingest_budget", self.per_image_ingest_budget),
            ("visit_cadence", self.visit_cadence),
            ("night_length", self.night_length),
            ("target_ingest_rate", self.target_ingest_rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.ccd_count == 0 || self.releases_per_year == 0 {
            return Err(Error::Config(
                "ccd_count and releases_per_year must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Visits that start inside one night.
    pub fn visits_per_night(&self) -> u64 {
        (self.night_length / self.visit_cadence).floor() as u64
    }
}

/// Where the pipeline runs; decides whether truncation must wait for a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SiteRole {
    Base,
    #[default]
    Archive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub index: IndexConfig,
    pub ccd_count: u16,
    pub max_batch_records: usize,
    /// Seconds between the starts of consecutive nights.
    pub day_length: f64,
    pub night_length: f64,
    pub role: SiteRole,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            index: IndexConfig::default(),
            ccd_count: 200,
            max_batch_records: 100_000,
            day_length: 86_400.0,
            night_length: 36_000.0,
            role: SiteRole::Archive,
        }
    }
}

impl IngestConfig {
    /// Inclusive epoch window of `night`.
    pub fn night_window(&self, night: u64) -> (f64, f64) {
        let start = night as f64 * self.day_length;
        (start, start + self.night_length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServerId {
    A,
    B,
}

impl ServerId {
    pub fn node_id(self) -> &'static str {
        match self {
            ServerId::A => "ingest-A",
            ServerId::B => "ingest-B",
        }
    }
}

/// Detections of one CCD image as delivered by one processing server.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBatch {
    pub visit_id: VisitId,
    pub ccd_id: CcdId,
    pub server_id: ServerId,
    pub records: Vec<SourceRecord>,
    /// Seconds on the pipeline clock.
    pub received_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub visit_id: VisitId,
    pub ccd_id: CcdId,
    pub accepted_rows: usize,
    pub duplicate: bool,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncateReport {
    pub night_id: u64,
    pub tables_truncated: usize,
    pub rows_dropped: usize,
}

/// A staged source with its max-level trixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagedRow {
    pub htm: TrixelId,
    pub record: SourceRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VisitEntry {
    start: usize,
    end: usize,
    server: ServerId,
    received_at: f64,
}

impl VisitEntry {
    fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// One CCD's staging table for the current night.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestTable {
    ccd_id: CcdId,
    night_id: u64,
    rows: Vec<StagedRow>,
    /// Rows past this point belong to an interrupted stage.
    committed: usize,
    visits: BTreeMap<VisitId, VisitEntry>,
    #[serde(skip)]
    spatial: BTreeMap<TrixelId, Vec<u32>>,
}

impl IngestTable {
    fn new(ccd_id: CcdId, night_id: u64) -> Self {
        IngestTable {
            ccd_id,
            night_id,
            rows: Vec::new(),
            committed: 0,
            visits: BTreeMap::new(),
            spatial: BTreeMap::new(),
        }
    }

    pub fn ccd_id(&self) -> CcdId {
        self.ccd_id
    }

    pub fn night_id(&self) -> u64 {
        self.night_id
    }

    pub fn row_count(&self) -> usize {
        self.committed
    }

    pub fn has_visit(&self, visit: VisitId) -> bool {
        self.visits.contains_key(&visit)
    }

    pub fn loaded_visits(&self) -> impl Iterator<Item = VisitId> + '_ {
        self.visits.keys().copied()
    }

    pub fn rows(&self) -> &[StagedRow] {
        &self.rows[..self.committed]
    }

    pub fn visit_rows(&self, visit: VisitId) -> &[StagedRow] {
        self.visits
            .get(&visit)
            .map(|e| &self.rows[e.range()])
            .unwrap_or(&[])
    }

    pub fn received_at(&self, visit: VisitId) -> Option<f64> {
        self.visits.get(&visit).map(|e| e.received_at)
    }

    /// Row positions under `cell`, from the table's spatial index.
    pub fn rows_under(&self, cell: TrixelId) -> impl Iterator<Item = &StagedRow> {
        self.spatial
            .range(cell..)
            .take_while(move |(t, _)| cell.contains_id(**t))
            .flat_map(|(_, v)| v.iter())
            .map(|&i| &self.rows[i as usize])
    }

    fn rebuild_index(&mut self) {
        self.spatial.clear();
        for (i, r) in self.rows[..self.committed].iter().enumerate() {
            self.spatial.entry(r.htm).or_default().push(i as u32);
        }
    }

    fn truncate(&mut self, night_id: u64) -> usize {
        let dropped = self.committed;
        *self = IngestTable::new(self.ccd_id, night_id);
        dropped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NightPhase {
    Open,
    Closed,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightStatus {
    pub night_id: u64,
    pub phase: NightPhase,
}

/// Running totals since the pipeline was created.
#[derive(Debug, Default)]
struct Counters {
    batches: AtomicU64,
    accepted_batches: AtomicU64,
    duplicate_batches: AtomicU64,
    rows_received: AtomicU64,
    rows_accepted: AtomicU64,
    duplicate_rows: AtomicU64,
    interrupted_batches: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub batches: u64,
    pub accepted_batches: u64,
    pub duplicate_batches: u64,
    pub interrupted_batches: u64,
    pub rows_received: u64,
    pub rows_accepted: u64,
    pub duplicate_rows: u64,
}

/// Serializable image of the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestState {
    pub config: IngestConfig,
    pub night: NightStatus,
    pub tables: Vec<IngestTable>,
    pub stats: IngestStats,
}

pub struct IngestPipeline {
    config: IngestConfig,
    tables: Vec<Mutex<IngestTable>>,
    night: RwLock<NightStatus>,
    counters: Counters,
}

impl IngestPipeline {
    pub fn new(config: IngestConfig) -> Result<Self> {
        config.index.validate()?;
        if config.ccd_count == 0 {
            return Err(Error::Config("ccd_count must be positive".into()));
        }
        Ok(IngestPipeline {
            config,
            tables: (0..config.ccd_count)
                .map(|c| Mutex::new(IngestTable::new(c, 0)))
                .collect(),
            night: RwLock::new(NightStatus {
                night_id: 0,
                phase: NightPhase::Open,
            }),
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &IngestConfig {
        &self.config
    }

    pub fn night(&self) -> NightStatus {
        *self.night.read()
    }

    fn table(&self, ccd: CcdId) -> Result<&Mutex<IngestTable>> {
        self.tables
            .get(ccd as usize)
            .ok_or(Error::UnknownCcd(ccd))
    }

    /// Loads `batch` into a fresh in-memory staging area, runs the fixed
    /// check set and discards the area. Never touches an ingest table.
    pub fn validate_staged(&self, batch: &DetectionBatch) -> ValidationReport {
        let night = self.night().night_id;
        validate::StagingArea::load(batch).check(&self.config, night)
    }

    /// Appends a validated batch to its CCD table, or acknowledges it as the
    /// other server's duplicate.
    pub fn stage_batch(
        &self,
        batch: &DetectionBatch,
        report: &ValidationReport,
    ) -> Result<StageResult> {
        self.stage_inner(batch, report, None)
    }

    /// Test and fault-injection hook: writes `rows_before_crash` rows of the
    /// batch and then fails without committing, like a server dying mid-load.
    pub fn stage_batch_interrupted(
        &self,
        batch: &DetectionBatch,
        report: &ValidationReport,
        rows_before_crash: usize,
    ) -> Result<StageResult> {
        self.stage_inner(batch, report, Some(rows_before_crash))
    }

    fn stage_inner(
        &self,
        batch: &DetectionBatch,
        report: &ValidationReport,
        crash_after: Option<usize>,
    ) -> Result<StageResult> {
        let started = Instant::now();
        if !report.covers(batch) {
            return Err(Error::ValidationRequired {
                visit_id: batch.visit_id,
                ccd_id: batch.ccd_id,
            });
        }
        let table = self.table(batch.ccd_id)?;
        let night = self.night.read();
        if night.phase != NightPhase::Open {
            return Err(Error::NightClosed(night.night_id));
        }
        self.counters.batches.fetch_add(1, Ordering::Relaxed);
        self.counters
            .rows_received
            .fetch_add(batch.records.len() as u64, Ordering::Relaxed);

        let mut t = table.lock();
        if t.has_visit(batch.visit_id) {
            drop(t);
            self.counters.duplicate_batches.fetch_add(1, Ordering::Relaxed);
            self.counters
                .duplicate_rows
                .fetch_add(batch.records.len() as u64, Ordering::Relaxed);
            return Ok(StageResult {
                visit_id: batch.visit_id,
                ccd_id: batch.ccd_id,
                accepted_rows: 0,
                duplicate: true,
                elapsed: started.elapsed(),
            });
        }

        // Anything past `committed` is debris from an interrupted stage.
        let committed = t.committed;
        t.rows.truncate(committed);

        let idx = &self.config.index;
        let start = t.rows.len();
        for (i, r) in batch.records.iter().enumerate() {
            if crash_after == Some(i) {
                // The replayed copy is the one that counts.
                self.counters.batches.fetch_sub(1, Ordering::Relaxed);
                self.counters
                    .rows_received
                    .fetch_sub(batch.records.len() as u64, Ordering::Relaxed);
                self.counters.interrupted_batches.fetch_add(1, Ordering::Relaxed);
                return Err(Error::StageInterrupted {
                    visit_id: batch.visit_id,
                    ccd_id: batch.ccd_id,
                    rows_written: i,
                });
            }
            let htm = idx.trixel(r.ra, r.dec, idx.max_level)?;
            t.rows.push(StagedRow { htm, record: *r });
        }
        let end = t.rows.len();
        for i in start..end {
            let htm = t.rows[i].htm;
            t.spatial.entry(htm).or_default().push(i as u32);
        }
        t.committed = end;
        t.visits.insert(
            batch.visit_id,
            VisitEntry {
                start,
                end,
                server: batch.server_id,
                received_at: batch.received_at,
            },
        );
        drop(t);

        self.counters.accepted_batches.fetch_add(1, Ordering::Relaxed);
        self.counters
            .rows_accepted
            .fetch_add(batch.records.len() as u64, Ordering::Relaxed);
        Ok(StageResult {
            visit_id: batch.visit_id,
            ccd_id: batch.ccd_id,
            accepted_rows: batch.records.len(),
            duplicate: false,
            elapsed: started.elapsed(),
        })
    }

    /// Drops uncommitted rows left by an interrupted stage. Returns how many.
    pub fn recover_table(&self, ccd: CcdId) -> Result<usize> {
        let mut t = self.table(ccd)?.lock();
        let debris = t.rows.len() - t.committed;
        let committed = t.committed;
        t.rows.truncate(committed);
        Ok(debris)
    }

    /// Rows accepted for `(ccd, visit)`; empty when not staged yet.
    pub fn read_for_association(&self, ccd: CcdId, visit: VisitId) -> Vec<SourceRecord> {
        match self.table(ccd) {
            Ok(t) => t.lock().visit_rows(visit).iter().map(|r| r.record).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Every staged row of `visit` with its trixel and batch arrival time,
    /// in CCD order.
    pub fn visit_rows(&self, visit: VisitId) -> Vec<(StagedRow, f64)> {
        let mut out = Vec::new();
        for t in &self.tables {
            let t = t.lock();
            if let Some(at) = t.received_at(visit) {
                out.extend(t.visit_rows(visit).iter().map(|r| (*r, at)));
            }
        }
        out
    }

    /// Rows left past the commit point by interrupted stages, over all tables.
    pub fn uncommitted_rows(&self) -> usize {
        self.tables
            .iter()
            .map(|t| {
                let t = t.lock();
                t.rows.len() - t.committed
            })
            .sum()
    }

    /// Number of CCDs that have an accepted batch for `visit`.
    pub fn staged_ccds(&self, visit: VisitId) -> usize {
        self.tables
            .iter()
            .filter(|t| t.lock().has_visit(visit))
            .count()
    }

    pub fn with_table<T>(&self, ccd: CcdId, f: impl FnOnce(&IngestTable) -> T) -> Result<T> {
        Ok(f(&self.table(ccd)?.lock()))
    }

    pub fn ccd_count(&self) -> CcdId {
        self.config.ccd_count
    }

    pub fn total_rows(&self) -> usize {
        self.tables.iter().map(|t| t.lock().row_count()).sum()
    }

    /// Brute-force scan across all ingest tables (table order, then row order).
    pub fn scan(&self, filter: &RowFilter) -> Vec<SourceRecord> {
        let mut out = Vec::new();
        for t in &self.tables {
            let t = t.lock();
            out.extend(t.rows().iter().map(|r| r.record).filter(|r| filter.matches(r)));
        }
        out
    }

    /// A table's committed rows as ND-JSON source records.
    pub fn export_ndjson(&self, ccd: CcdId) -> Result<String> {
        let t = self.table(ccd)?.lock();
        let mut out = String::new();
        for r in t.rows() {
            out.push_str(&serde_json::to_string(&r.record)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Ends staging for the current night.
    pub fn close_night(&self) -> NightStatus {
        let mut n = self.night.write();
        if n.phase == NightPhase::Open {
            n.phase = NightPhase::Closed;
        }
        *n
    }

    pub(crate) fn mark_merged(&self, night_id: u64) -> Result<()> {
        let mut n = self.night.write();
        if n.night_id != night_id {
            return Err(Error::NightClosed(night_id));
        }
        match n.phase {
            NightPhase::Open => Err(Error::NightOpen(night_id)),
            _ => {
                n.phase = NightPhase::Merged;
                Ok(())
            }
        }
    }

    /// Empties every ingest table and opens the next night. At the archive
    /// the night's merge must have completed first.
    pub fn truncate_night(&self, night_id: u64) -> Result<TruncateReport> {
        let mut n = self.night.write();
        if n.night_id != night_id {
            return Err(Error::NightClosed(night_id));
        }
        if self.config.role == SiteRole::Archive && n.phase != NightPhase::Merged {
            return Err(Error::MergePending(night_id));
        }
        let next = night_id + 1;
        let rows_dropped = self.tables.iter().map(|t| t.lock().truncate(next)).sum();
        *n = NightStatus {
            night_id: next,
            phase: NightPhase::Open,
        };
        Ok(TruncateReport {
            night_id,
            tables_truncated: self.tables.len(),
            rows_dropped,
        })
    }

    pub fn stats(&self) -> IngestStats {
        let c = &self.counters;
        IngestStats {
            batches: c.batches.load(Ordering::Relaxed),
            accepted_batches: c.accepted_batches.load(Ordering::Relaxed),
            duplicate_batches: c.duplicate_batches.load(Ordering::Relaxed),
            interrupted_batches: c.interrupted_batches.load(Ordering::Relaxed),
            rows_received: c.rows_received.load(Ordering::Relaxed),
            rows_accepted: c.rows_accepted.load(Ordering::Relaxed),
            duplicate_rows: c.duplicate_rows.load(Ordering::Relaxed),
        }
    }

    pub fn state(&self) -> IngestState {
        IngestState {
            config: self.config,
            night: self.night(),
            tables: self.tables.iter().map(|t| t.lock().clone()).collect(),
            stats: self.stats(),
        }
    }

    pub fn from_state(state: IngestState) -> Result<Self> {
        let p = IngestPipeline::new(state.config)?;
        *p.night.write() = state.night;
        let by_ccd: HashMap<CcdId, IngestTable> =
            state.tables.into_iter().map(|t| (t.ccd_id, t)).collect();
        for (ccd, slot) in p.tables.iter().enumerate() {
            if let Some(mut t) = by_ccd.get(&(ccd as CcdId)).cloned() {
                t.rebuild_index();
                *slot.lock() = t;
            }
        }
        let c = &p.counters;
        let s = state.stats;
        c.batches.store(s.batches, Ordering::Relaxed);
        c.accepted_batches.store(s.accepted_batches, Ordering::Relaxed);
        c.duplicate_batches.store(s.duplicate_batches, Ordering::Relaxed);
        c.interrupted_batches.store(s.interrupted_batches, Ordering::Relaxed);
        c.rows_received.store(s.rows_received, Ordering::Relaxed);
        c.rows_accepted.store(s.rows_accepted, Ordering::Relaxed);
        c.duplicate_rows.store(s.duplicate_rows, Ordering::Relaxed);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Filter;

    fn cfg() -> IngestConfig {
        IngestConfig::default()
    }

    fn batch(visit: u64, ccd: u16, server: ServerId, n: usize) -> DetectionBatch {
        DetectionBatch {
            visit_id: visit,
            ccd_id: ccd,
            server_id: server,
            records: (0..n)
                .map(|i| SourceRecord {
                    source_id: visit * 1_000_000 + ccd as u64 * 1000 + i as u64,
                    visit_id: visit,
                    ccd_id: ccd,
                    ra: 10.0 + ccd as f64 * 0.1 + i as f64 * 1e-4,
                    dec: -5.0 + i as f64 * 1e-4,
                    epoch: 100.0 + visit as f64 * 13.0,
                    flux: 1.0 + i as f64,
                    filter: Filter::R,
                })
                .collect(),
            received_at: 0.0,
        }
    }

    fn stage(p: &IngestPipeline, b: &DetectionBatch) -> StageResult {
        let report = p.validate_staged(b);
        assert!(report.ok(), "{:?}", report.violations);
        p.stage_batch(b, &report).unwrap()
    }

    #[test]
    fn second_server_copy_is_duplicate() {
        let p = IngestPipeline::new(cfg()).unwrap();
        let a = batch(1, 3, ServerId::A, 10);
        let mut b = a.clone();
        b.server_id = ServerId::B;
        let first = stage(&p, &a);
        assert_eq!((first.accepted_rows, first.duplicate), (10, false));
        let second = stage(&p, &b);
        assert_eq!((second.accepted_rows, second.duplicate), (0, true));
        assert_eq!(p.with_table(3, |t| t.row_count()).unwrap(), 10);
        let s = p.stats();
        assert_eq!((s.duplicate_batches, s.duplicate_rows), (1, 10));
    }

    #[test]
    fn ccd_tables_are_isolated() {
        let p = IngestPipeline::new(cfg()).unwrap();
        stage(&p, &batch(1, 7, ServerId::A, 25));
        assert_eq!(p.with_table(8, |t| t.row_count()).unwrap(), 0);
        assert_eq!(p.with_table(7, |t| t.row_count()).unwrap(), 25);
    }

    #[test]
    fn staged_rows_are_immediately_visible() {
        let p = IngestPipeline::new(cfg()).unwrap();
        let b = batch(4, 0, ServerId::A, 12);
        stage(&p, &b);
        assert_eq!(p.read_for_association(0, 4), b.records);
        assert!(p.read_for_association(0, 5).is_empty());
        assert!(p.read_for_association(999, 4).is_empty());
    }

    #[test]
    fn skipping_validation_is_refused() {
        let p = IngestPipeline::new(cfg()).unwrap();
        let b = batch(1, 0, ServerId::A, 3);
        let other = batch(2, 0, ServerId::A, 3);
        let report = p.validate_staged(&other);
        assert!(matches!(
            p.stage_batch(&b, &report),
            Err(Error::ValidationRequired { visit_id: 1, .. })
        ));
        let mut bad = batch(3, 0, ServerId::A, 3);
        bad.records[0].dec = 123.0;
        let report = p.validate_staged(&bad);
        assert!(!report.ok());
        assert!(matches!(
            p.stage_batch(&bad, &report),
            Err(Error::ValidationRequired { .. })
        ));
        assert_eq!(p.total_rows(), 0);
    }

    #[test]
    fn closed_night_refuses_staging() {
        let p = IngestPipeline::new(cfg()).unwrap();
        let b = batch(1, 0, ServerId::A, 3);
        let report = p.validate_staged(&b);
        p.close_night();
        assert!(matches!(p.stage_batch(&b, &report), Err(Error::NightClosed(0))));
    }

    #[test]
    fn archive_truncate_waits_for_merge() {
        let p = IngestPipeline::new(cfg()).unwrap();
        stage(&p, &batch(1, 0, ServerId::A, 3));
        assert!(matches!(p.truncate_night(0), Err(Error::MergePending(0))));
        p.close_night();
        assert!(matches!(p.truncate_night(0), Err(Error::MergePending(0))));
        p.mark_merged(0).unwrap();
        let r = p.truncate_night(0).unwrap();
        assert_eq!((r.tables_truncated, r.rows_dropped), (200, 3));
        assert_eq!(p.night().night_id, 1);
        assert_eq!(p.night().phase, NightPhase::Open);
        assert_eq!(p.total_rows(), 0);
        assert!(p.with_table(0, |t| t.loaded_visits().count()).unwrap() == 0);
    }

    #[test]
    fn base_truncate_needs_no_merge() {
        let p = IngestPipeline::new(IngestConfig {
            role: SiteRole::Base,
            ..cfg()
        })
        .unwrap();
        let r = p.truncate_night(0).unwrap();
        assert_eq!(r.rows_dropped, 0);
        assert_eq!(r.tables_truncated, 200);
    }

    #[test]
    fn interrupted_stage_then_replay_matches_clean_run() {
        let clean = IngestPipeline::new(cfg()).unwrap();
        let crashy = IngestPipeline::new(cfg()).unwrap();
        let first = batch(1, 2, ServerId::A, 20);
        let second = batch(2, 2, ServerId::A, 30);
        for p in [&clean, &crashy] {
            stage(p, &first);
        }
        stage(&clean, &second);

        let report = crashy.validate_staged(&second);
        let err = crashy.stage_batch_interrupted(&second, &report, 11).unwrap_err();
        assert!(matches!(err, Error::StageInterrupted { rows_written: 11, .. }));
        // Partial rows are never visible.
        assert!(crashy.read_for_association(2, 2).is_empty());
        assert_eq!(crashy.recover_table(2).unwrap(), 11);
        stage(&crashy, &second);

        let a = clean.with_table(2, |t| t.rows().to_vec()).unwrap();
        let b = crashy.with_table(2, |t| t.rows().to_vec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(clean.export_ndjson(2).unwrap(), crashy.export_ndjson(2).unwrap());
    }

    #[test]
    fn spatial_index_tracks_rows() {
        let p = IngestPipeline::new(cfg()).unwrap();
        stage(&p, &batch(1, 5, ServerId::A, 40));
        let n = p
            .with_table(5, |t| {
                TrixelId::roots().map(|r| t.rows_under(r).count()).sum::<usize>()
            })
            .unwrap();
        assert_eq!(n, 40);
    }

    #[test]
    fn state_round_trip_restores_index() {
        let p = IngestPipeline::new(cfg()).unwrap();
        stage(&p, &batch(1, 5, ServerId::A, 10));
        let json = serde_json::to_string(&p.state()).unwrap();
        let q = IngestPipeline::from_state(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(q.read_for_association(5, 1), p.read_for_association(5, 1));
        let n = q
            .with_table(5, |t| TrixelId::roots().map(|r| t.rows_under(r).count()).sum::<usize>())
            .unwrap();
        assert_eq!(n, 10);
        assert_eq!(q.stats(), p.stats());
    }

    #[test]
    fn visits_per_night_arithmetic() {
        assert_eq!(BudgetConfig::default().visits_per_night(), 2769);
    }
}
