//! The whole archive behind one handle, with JSON persistence.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::balancer::{Balancer, BalancerConfig, BalancerState, Tier};
use crate::catalog::{CatalogConfig, CatalogState, CatalogStore, Checksum, PartitionState};
use crate::error::{Error, Result};
use crate::index::PartitionKey;
use crate::ingest::{
    AssociationConfig, AssociationResult, Associator, BudgetConfig, DetectionBatch, IngestConfig,
    IngestPipeline, IngestState, IngestStats, NightPhase, NightStatus, ObjectTableState,
    StageResult, TruncateReport, ValidationReport,
};
use crate::merge::{execute_merge, plan_merge, MergePlan, MergeReport};
use crate::router::{Query, QueryPlan, QueryResult, Router};
use crate::types::{CcdId, VisitId};
use crate::versioning::filemap::{self, FileMap, FileMapEntry};
use crate::versioning::provenance::{
    InputRef, InputSource, Params, ProvenanceRecord, ProvenanceState, ProvenanceStore, RecipeBook,
};
use crate::versioning::{
    ObjectVersion, QaReport, Release, ReleaseRegistry, VersionSelector, VersionState, VersionStore,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveConfig {
    pub catalog: CatalogConfig,
    /// Its index settings are replaced by the catalog's.
    pub ingest: IngestConfig,
    pub association: AssociationConfig,
    pub balancer: BalancerConfig,
    pub budget: BudgetConfig,
    /// Version every touched object at each nightly merge; when off, object
    /// versions are only cut at release time.
    pub retain_prerelease_versions: bool,
    /// Replicas placed for each newly merged partition, when the topology
    /// has archive-tier nodes.
    pub replicas: usize,
    pub query_parallelism: usize,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        ArchiveConfig {
            catalog: CatalogConfig::default(),
            ingest: IngestConfig::default(),
            association: AssociationConfig::default(),
            balancer: BalancerConfig::default(),
            budget: BudgetConfig::default(),
            retain_prerelease_versions: true,
            replicas: 2,
            query_parallelism: 8,
        }
    }
}

impl ArchiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.index.validate()?;
        self.budget.validate()?;
        if self.ingest.ccd_count == 0 {
            return Err(Error::Config("ccd_count must be positive".into()));
        }
        if self.query_parallelism == 0 {
            return Err(Error::Config("query_parallelism must be positive".into()));
        }
        let a = &self.association;
        if !(a.match_radius_arcsec > 0.0 && a.alert_sigma > 0.0 && a.visit_timeout > 0.0) {
            return Err(Error::Config("association parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveTotals {
    pub rows_merged: u64,
    pub validation_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub validation: ValidationReport,
    pub staged: Option<StageResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightMergeReport {
    pub merge: MergeReport,
    pub visits_associated_late: usize,
    pub objects_upserted: usize,
    /// Objects whose home partition is frozen; their rows stay as released.
    pub objects_in_frozen_homes: usize,
    pub versions_created: usize,
    pub replicas_placed: usize,
    pub notes: Vec<String>,
    pub truncate: Option<TruncateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub partitions: usize,
    pub live_partitions: usize,
    pub frozen_partitions: usize,
    pub catalog_rows: usize,
    pub catalog_bytes: u64,
    pub objects: usize,
    pub nodes: usize,
    pub alive_nodes: usize,
    pub topology_version: u64,
    pub releases: usize,
    pub files: usize,
    pub products: usize,
    pub night: NightStatus,
    pub staged_rows: usize,
    pub ingest: IngestStats,
    pub totals: ArchiveTotals,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveState {
    pub config: ArchiveConfig,
    pub clock: f64,
    pub catalog: CatalogState,
    pub ingest: IngestState,
    pub objects: ObjectTableState,
    pub versions: VersionState,
    pub releases: Vec<Release>,
    pub provenance: ProvenanceState,
    pub files: Vec<FileMapEntry>,
    pub balancer: BalancerState,
    pub pending_plan: Option<MergePlan>,
    pub associated: BTreeSet<VisitId>,
    pub totals: ArchiveTotals,
}

pub const STATE_FILE: &str = "archive.json";

pub struct Archive {
    config: ArchiveConfig,
    pub catalog: CatalogStore,
    pub ingest: IngestPipeline,
    pub objects: Associator,
    pub versions: VersionStore,
    pub releases: ReleaseRegistry,
    pub provenance: ProvenanceStore,
    pub files: FileMap,
    pub balancer: Balancer,
    pending_plan: Mutex<Option<MergePlan>>,
    associated: Mutex<BTreeSet<VisitId>>,
    totals: Mutex<ArchiveTotals>,
    clock: Mutex<f64>,
}

impl Archive {
    pub fn new(config: ArchiveConfig) -> Result<Self> {
        let config = ArchiveConfig {
            ingest: IngestConfig {
                index: config.catalog.index,
                ..config.ingest
            },
            ..config
        };
        config.validate()?;
        Ok(Archive {
            catalog: CatalogStore::new(config.catalog)?,
            ingest: IngestPipeline::new(config.ingest)?,
            objects: Associator::new(config.association, config.catalog.index),
            versions: VersionStore::new(),
            releases: ReleaseRegistry::new(),
            provenance: ProvenanceStore::new(RecipeBook::default()),
            files: FileMap::new(),
            balancer: Balancer::new(config.balancer)?,
            pending_plan: Mutex::new(None),
            associated: Mutex::new(BTreeSet::new()),
            totals: Mutex::new(ArchiveTotals::default()),
            clock: Mutex::new(0.0),
            config,
        })
    }

    pub fn config(&self) -> &ArchiveConfig {
        &self.config
    }

    /// Simulated clock, seconds.
    pub fn clock(&self) -> f64 {
        *self.clock.lock()
    }

    pub fn set_clock(&self, t: f64) {
        let mut c = self.clock.lock();
        *c = c.max(t);
        self.balancer.set_time(*c);
    }

    pub fn totals(&self) -> ArchiveTotals {
        *self.totals.lock()
    }

    /// Validates and, when clean, stages one batch.
    pub fn ingest_batch(&self, batch: &DetectionBatch) -> Result<IngestOutcome> {
        let validation = self.ingest.validate_staged(batch);
        if !validation.ok() {
            self.totals.lock().validation_failures += 1;
            return Ok(IngestOutcome {
                validation,
                staged: None,
            });
        }
        let staged = self.ingest.stage_batch(batch, &validation)?;
        Ok(IngestOutcome {
            validation,
            staged: Some(staged),
        })
    }

    /// Associates the staged sources of `visit`, once per visit.
    pub fn associate_visit(&self, visit: VisitId, alert_time: f64) -> AssociationResult {
        let mut done = self.associated.lock();
        if !done.insert(visit) {
            return AssociationResult {
                visit_id: visit,
                ..AssociationResult::default()
            };
        }
        self.objects.associate(&self.ingest, visit, alert_time)
    }

    fn staged_visits(&self) -> Result<BTreeSet<VisitId>> {
        let mut out = BTreeSet::new();
        for ccd in 0..self.ingest.ccd_count() {
            self.ingest
                .with_table(ccd, |t| out.extend(t.loaded_visits()))?;
        }
        Ok(out)
    }

    /// Closes the night, associates stragglers, merges, folds object updates
    /// into the catalog and version chains, and optionally truncates.
    pub fn merge_night(&self, truncate: bool) -> Result<NightMergeReport> {
        let night = self.ingest.close_night();
        let mut notes = Vec::new();

        let mut late = 0;
        let now = self.clock();
        for v in self.staged_visits()? {
            if !self.associated.lock().contains(&v) {
                self.associate_visit(v, now);
                late += 1;
            }
        }

        let mut pending = self.pending_plan.lock();
        let mut plan = match pending.take() {
            Some(p) if p.night_id == night.night_id => p,
            _ => plan_merge(&self.ingest, night.night_id)?,
        };
        let merge = execute_merge(&self.catalog, &self.ingest, &mut plan)?;
        self.totals.lock().rows_merged += merge.rows_merged as u64;
        let complete = merge.complete;
        if !complete {
            *pending = Some(plan);
        }
        drop(pending);

        let mut report = NightMergeReport {
            merge,
            visits_associated_late: late,
            objects_upserted: 0,
            objects_in_frozen_homes: 0,
            versions_created: 0,
            replicas_placed: 0,
            notes: Vec::new(),
            truncate: None,
        };
        if !complete {
            notes.push("merge incomplete; plan kept for resume".into());
            report.notes = notes;
            return Ok(report);
        }

        let dirty = self.objects.drain_dirty();
        let mut by_home: std::collections::BTreeMap<PartitionKey, Vec<_>> = Default::default();
        for (obj, home) in &dirty {
            by_home.entry(*home).or_default().push(*obj);
        }
        for (home, objs) in by_home {
            match self.catalog.upsert_objects(home, &objs) {
                Ok(n) => report.objects_upserted += n,
                Err(Error::FrozenPartition(_)) => report.objects_in_frozen_homes += objs.len(),
                Err(e) => return Err(e),
            }
        }
        if self.config.retain_prerelease_versions {
            for (obj, _) in &dirty {
                let before = self
                    .versions
                    .read_versioned(obj.object_id, VersionSelector::Latest)
                    .ok()
                    .map(|b| b.version);
                let v = self.versions.commit(*obj)?;
                if before != Some(v.version) {
                    report.versions_created += 1;
                }
                self.objects.set_version(obj.object_id, v.version);
            }
        }

        report.replicas_placed = self.place_new_partitions(&mut notes);
        if truncate {
            report.truncate = Some(self.ingest.truncate_night(night.night_id)?);
            self.associated.lock().clear();
        }
        report.notes = notes;
        Ok(report)
    }

    /// Gives partitions nobody hosts their replicas on the archive tier.
    fn place_new_partitions(&self, notes: &mut Vec<String>) -> usize {
        let topo = self.balancer.topology();
        let archive_nodes = topo.nodes.values().filter(|n| n.tier == Tier::Archive).count();
        if archive_nodes == 0 {
            return 0;
        }
        let copies = self.config.replicas.min(archive_nodes).max(1);
        let hosted = topo.hosted_keys();
        let fresh: Vec<PartitionKey> = self
            .catalog
            .keys()
            .into_iter()
            .filter(|k| !hosted.contains(k))
            .collect();
        match self
            .balancer
            .distribute(&self.catalog, &fresh, Tier::Archive, copies)
        {
            Ok(()) => fresh.len() * copies,
            Err(e) => {
                notes.push(format!("replica placement: {e}"));
                0
            }
        }
    }

    /// Mechanical QA over everything ingested so far.
    pub fn qa_report(&self) -> QaReport {
        let s = self.ingest.stats();
        let night = self.ingest.night();
        let pending = if night.phase == NightPhase::Merged {
            0
        } else {
            self.ingest.total_rows() as u64
        };
        let t = self.totals();
        QaReport::mechanical(
            t.validation_failures,
            s.rows_received,
            t.rows_merged,
            s.duplicate_rows,
            pending,
            self.ingest.uncommitted_rows() as u64,
        )
    }

    /// Releases `keys`, or every catalog partition when `None`.
    pub fn create_release(&self, keys: Option<&[PartitionKey]>) -> Result<Release> {
        let qa = self.qa_report();
        if !self.config.retain_prerelease_versions {
            for obj in self.objects.objects() {
                let v = self.versions.commit(obj)?;
                self.objects.set_version(obj.object_id, v.version);
            }
        }
        let all;
        let keys = match keys {
            Some(k) => k,
            None => {
                all = self.catalog.keys();
                &all
            }
        };
        self.releases
            .create_release(&self.catalog, keys, &qa, self.clock(), &self.versions)
    }

    pub fn router(&self) -> Router<'_> {
        Router {
            catalog: &self.catalog,
            releases: &self.releases,
            versions: &self.versions,
            balancer: &self.balancer,
            objects: Some(&self.objects),
            parallelism: self.config.query_parallelism,
        }
    }

    pub fn plan_query(&self, q: &Query) -> Result<QueryPlan> {
        self.router().plan(q)
    }

    pub fn query(&self, q: &Query) -> Result<QueryResult> {
        self.router().query(q)
    }

    pub fn read_object(&self, id: u64, selector: VersionSelector) -> Result<ObjectVersion> {
        self.versions.read_versioned(id, selector)
    }

    /// Writes a raw image stub under `root` and registers it.
    pub fn store_raw_image(
        &self,
        root: &Path,
        night: u64,
        visit: VisitId,
        ccd: CcdId,
        payload: &[u8],
    ) -> Result<FileMapEntry> {
        let header = filemap::raw_header(night, visit, ccd);
        let path = root.join(format!("n{night}")).join(format!("v{visit}_c{ccd}.img"));
        filemap::write_stub(&path, &header, payload)?;
        self.files.register_file(&header, &path)
    }

    pub fn record_product(
        &self,
        product_id: &str,
        recipe: &str,
        params: Params,
        inputs: Vec<InputRef>,
    ) -> Result<ProvenanceRecord> {
        self.provenance
            .record_provenance(product_id, recipe, params, inputs, self)
    }

    pub fn regenerate(&self, product_id: &str) -> Result<Vec<u8>> {
        self.provenance.regenerate(product_id, self)
    }

    pub fn status(&self) -> Status {
        let topo = self.balancer.topology();
        let keys = self.catalog.keys();
        let frozen = keys
            .iter()
            .filter(|k| {
                self.catalog
                    .partition(k)
                    .is_some_and(|p| p.read().is_frozen())
            })
            .count();
        Status {
            partitions: keys.len(),
            live_partitions: keys.len() - frozen,
            frozen_partitions: frozen,
            catalog_rows: self.catalog.total_rows(),
            catalog_bytes: self.catalog.total_bytes(),
            objects: self.objects.len(),
            nodes: topo.nodes.len(),
            alive_nodes: topo.nodes.values().filter(|n| n.alive).count(),
            topology_version: topo.version,
            releases: self.releases.len(),
            files: self.files.len(),
            products: self.provenance.records().len(),
            night: self.ingest.night(),
            staged_rows: self.ingest.total_rows(),
            ingest: self.ingest.stats(),
            totals: self.totals(),
        }
    }

    pub fn state(&self) -> ArchiveState {
        ArchiveState {
            config: self.config,
            clock: self.clock(),
            catalog: self.catalog.state(),
            ingest: self.ingest.state(),
            objects: self.objects.state(),
            versions: self.versions.state(),
            releases: self.releases.state(),
            provenance: self.provenance.state(),
            files: self.files.entries(),
            balancer: self.balancer.state(),
            pending_plan: self.pending_plan.lock().clone(),
            associated: self.associated.lock().clone(),
            totals: self.totals(),
        }
    }

    pub fn from_state(state: ArchiveState) -> Result<Self> {
        let config = state.config;
        Ok(Archive {
            catalog: CatalogStore::from_state(state.catalog)?,
            ingest: IngestPipeline::from_state(state.ingest)?,
            objects: Associator::from_state(config.association, config.catalog.index, state.objects),
            versions: VersionStore::from_state(state.versions),
            releases: ReleaseRegistry::from_state(state.releases),
            provenance: ProvenanceStore::from_state(RecipeBook::default(), state.provenance),
            files: FileMap::from_entries(state.files),
            balancer: Balancer::from_state(state.balancer)?,
            pending_plan: Mutex::new(state.pending_plan),
            associated: Mutex::new(state.associated),
            totals: Mutex::new(state.totals),
            clock: Mutex::new(state.clock),
            config,
        })
    }

    pub fn state_path(dir: &Path) -> PathBuf {
        dir.join(STATE_FILE)
    }

    /// Writes the state file, replacing any previous one atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&self.state())?)?;
        fs::rename(&tmp, Self::state_path(dir))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::state_path(dir);
        let bytes = fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("no archive at {} (run init first)", dir.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Archive::from_state(serde_json::from_slice(&bytes)?)
    }
}

impl InputSource for Archive {
    fn fetch(&self, input: &InputRef) -> Result<(Vec<u8>, Checksum)> {
        match input {
            InputRef::Partition { release, key } => {
                let rel = self
                    .releases
                    .get(*release)
                    .map_err(|_| Error::InputsMissing(input.to_string()))?;
                if !rel.contains(key) {
                    return Err(Error::InputsMissing(input.to_string()));
                }
                let part = self
                    .catalog
                    .partition(key)
                    .ok_or_else(|| Error::InputsMissing(input.to_string()))?;
                let p = part.read();
                if p.state() == PartitionState::Live {
                    return Err(Error::InputsMissing(input.to_string()));
                }
                Ok((p.export_ndjson().into_bytes(), p.checksum()))
            }
            InputRef::File { logical_path } => {
                let bytes = self.files.read(logical_path)?;
                let sum = Checksum::of(&bytes);
                Ok((bytes, sum))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ServerId;
    use crate::types::{Filter, SourceRecord};

    fn small() -> ArchiveConfig {
        ArchiveConfig {
            ingest: IngestConfig {
                ccd_count: 4,
                ..IngestConfig::default()
            },
            ..ArchiveConfig::default()
        }
    }

    fn batch(visit: u64, ccd: u16, server: ServerId, n: usize) -> DetectionBatch {
        DetectionBatch {
            visit_id: visit,
            ccd_id: ccd,
            server_id: server,
            records: (0..n)
                .map(|i| SourceRecord {
                    source_id: i as u64,
                    visit_id: visit,
                    ccd_id: ccd,
                    ra: 30.0 + ccd as f64 + i as f64 * 0.01,
                    dec: -20.0,
                    epoch: 1000.0 + visit as f64,
                    flux: 10.0,
                    filter: Filter::G,
                })
                .collect(),
            received_at: 1002.0 + visit as f64,
        }
    }

    #[test]
    fn fresh_status_is_empty() {
        let a = Archive::new(small()).unwrap();
        let s = a.status();
        assert_eq!(s.partitions, 0);
        assert_eq!(s.nodes, 0);
    }

    #[test]
    fn night_cycle_and_persistence() {
        let a = Archive::new(small()).unwrap();
        for v in 1..=2 {
            for ccd in 0..4 {
                for s in [ServerId::A, ServerId::B] {
                    a.ingest_batch(&batch(v, ccd, s, 3)).unwrap();
                }
            }
        }
        let r = a.associate_visit(1, 1004.0);
        assert_eq!(r.new_objects.len(), 12);
        let m = a.merge_night(true).unwrap();
        assert!(m.merge.complete);
        assert_eq!(m.merge.rows_merged, 24);
        assert_eq!(m.visits_associated_late, 1);
        assert_eq!(a.catalog.total_rows(), 24);
        assert!(a.qa_report().passed());
        let rel = a.create_release(None).unwrap();
        assert_eq!(rel.objects_pinned, a.objects.len());

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let b = Archive::load(dir.path()).unwrap();
        assert_eq!(b.status(), a.status());
        assert_eq!(b.releases.verify(&b.catalog, rel.release_id).unwrap(), vec![]);
    }

    #[test]
    fn invalid_batch_is_reported_not_staged() {
        let a = Archive::new(small()).unwrap();
        let mut b = batch(1, 0, ServerId::A, 2);
        b.records[1].dec = 100.0;
        let out = a.ingest_batch(&b).unwrap();
        assert!(out.staged.is_none());
        assert_eq!(a.totals().validation_failures, 1);
        assert_eq!(a.ingest.total_rows(), 0);
    }
}
