//! Nightly merge of the per-CCD ingest tables into the partitioned catalog.
//!
//! A plan assigns every staged row of the night to exactly one catalog
//! partition. Executing it applies one partition at a time; each manifest
//! entry carries its own completion flag, so a failed run can be resumed by
//! executing the same plan again.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::CatalogStore;
use crate::error::{Error, Result};
use crate::index::PartitionKey;
use crate::ingest::{IngestPipeline, NightPhase};
use crate::types::{CcdId, SourceRecord};

/// Position of one row inside an ingest table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowRef {
    pub ccd_id: CcdId,
    pub row: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub key: PartitionKey,
    pub rows: Vec<RowRef>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergePlan {
    pub night_id: u64,
    /// Ascending by partition key.
    pub entries: Vec<ManifestEntry>,
    pub total_rows: usize,
}

impl MergePlan {
    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(|e| e.done)
    }

    pub fn pending(&self) -> usize {
        self.entries.iter().filter(|e| !e.done).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFailure {
    pub key: PartitionKey,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub night_id: u64,
    pub partitions_touched: usize,
    pub rows_merged: usize,
    pub failures: Vec<PartitionFailure>,
    pub complete: bool,
    #[serde(with = "crate::ingest::duration_secs")]
    pub elapsed: Duration,
}

/// Builds the merge plan for the pipeline's current night.
pub fn plan_merge(pipeline: &IngestPipeline, night_id: u64) -> Result<MergePlan> {
    let night = pipeline.night();
    if night.night_id != night_id {
        return Err(Error::NightClosed(night_id));
    }
    if night.phase == NightPhase::Open {
        return Err(Error::NightOpen(night_id));
    }
    let idx = pipeline.config().index;
    let mut manifests: BTreeMap<PartitionKey, Vec<RowRef>> = BTreeMap::new();
    let mut total_rows = 0;
    for ccd in 0..pipeline.ccd_count() {
        pipeline.with_table(ccd, |t| -> Result<()> {
            for (i, r) in t.rows().iter().enumerate() {
                let key = PartitionKey::new(
                    r.htm.ancestor(idx.partition_level).expect("staged at max level"),
                    idx.bucket(r.record.epoch),
                );
                manifests.entry(key).or_default().push(RowRef {
                    ccd_id: ccd,
                    row: i as u32,
                });
                total_rows += 1;
            }
            Ok(())
        })??;
    }
    // A night already merged yields a plan with nothing left to do.
    let done = night.phase == NightPhase::Merged;
    Ok(MergePlan {
        night_id,
        entries: manifests
            .into_iter()
            .map(|(key, rows)| ManifestEntry { key, rows, done })
            .collect(),
        total_rows,
    })
}

/// Applies every pending entry of `plan`. Entries that fail stay pending and
/// are listed in the report; the night is marked merged only once all are done.
pub fn execute_merge(
    catalog: &CatalogStore,
    pipeline: &IngestPipeline,
    plan: &mut MergePlan,
) -> Result<MergeReport> {
    let started = Instant::now();
    if pipeline.night().night_id != plan.night_id {
        return Err(Error::NightClosed(plan.night_id));
    }
    // Snapshots wait for the whole merge, not just for each partition.
    let _guard = catalog.write_guard();

    let tables: Vec<Vec<SourceRecord>> = (0..pipeline.ccd_count())
        .map(|ccd| pipeline.with_table(ccd, |t| t.rows().iter().map(|r| r.record).collect()))
        .collect::<Result<_>>()?;

    let outcomes: Vec<(PartitionKey, Result<usize>)> = plan
        .entries
        .par_iter_mut()
        .filter(|e| !e.done)
        .map(|e| {
            let records: Vec<SourceRecord> = e
                .rows
                .iter()
                .map(|r| tables[r.ccd_id as usize][r.row as usize])
                .collect();
            let res = catalog.insert_routed(e.key, &records);
            if res.is_ok() {
                e.done = true;
            }
            (e.key, res)
        })
        .collect();

    let mut report = MergeReport {
        night_id: plan.night_id,
        partitions_touched: 0,
        rows_merged: 0,
        failures: Vec::new(),
        complete: false,
        elapsed: Duration::ZERO,
    };
    for (key, res) in outcomes {
        match res {
            Ok(n) => {
                report.partitions_touched += 1;
                report.rows_merged += n;
            }
            Err(e) => {
                report.failures.push(PartitionFailure {
                    key,
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    report.complete = plan.is_complete();
    if report.complete {
        pipeline.mark_merged(plan.night_id)?;
    }
    report.elapsed = started.elapsed();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogConfig;
    use crate::ingest::{DetectionBatch, IngestConfig, ServerId};
    use crate::types::Filter;

    fn pipeline() -> IngestPipeline {
        IngestPipeline::new(IngestConfig {
            ccd_count: 4,
            ..IngestConfig::default()
        })
        .unwrap()
    }

    fn stage(p: &IngestPipeline, visit: u64, ccd: u16, coords: &[(f64, f64)]) {
        let records = coords
            .iter()
            .enumerate()
            .map(|(i, &(ra, dec))| SourceRecord {
                source_id: i as u64,
                visit_id: visit,
                ccd_id: ccd,
                ra,
                dec,
                epoch: 100.0 + visit as f64,
                flux: 1.0,
                filter: Filter::R,
            })
            .collect();
        let b = DetectionBatch {
            visit_id: visit,
            ccd_id: ccd,
            server_id: ServerId::A,
            records,
            received_at: 0.0,
        };
        let rep = p.validate_staged(&b);
        p.stage_batch(&b, &rep).unwrap();
    }

    #[test]
    fn open_night_refuses_plan() {
        let p = pipeline();
        assert!(matches!(plan_merge(&p, 0), Err(Error::NightOpen(0))));
    }

    #[test]
    fn empty_night_plans_nothing() {
        let p = pipeline();
        p.close_night();
        let plan = plan_merge(&p, 0).unwrap();
        assert_eq!(plan.total_rows, 0);
        assert!(plan.entries.is_empty());
    }

    #[test]
    fn one_cell_gives_one_entry() {
        let p = pipeline();
        stage(&p, 1, 0, &[(10.0, 10.0), (10.001, 10.0)]);
        stage(&p, 1, 1, &[(10.0, 10.001)]);
        p.close_night();
        let plan = plan_merge(&p, 0).unwrap();
        assert_eq!(plan.entries.len(), 1);
        assert_eq!(plan.total_rows, 3);
    }

    #[test]
    fn execute_is_idempotent() {
        let p = pipeline();
        stage(&p, 1, 0, &[(10.0, 10.0), (200.0, -40.0)]);
        stage(&p, 2, 3, &[(100.0, 60.0)]);
        p.close_night();
        let cat = CatalogStore::new(CatalogConfig::default()).unwrap();
        let mut plan = plan_merge(&p, 0).unwrap();
        let first = execute_merge(&cat, &p, &mut plan).unwrap();
        assert_eq!(first.rows_merged, 3);
        assert!(first.complete);
        assert_eq!(cat.total_rows(), 3);
        let again = execute_merge(&cat, &p, &mut plan).unwrap();
        assert_eq!(again.rows_merged, 0);
        assert_eq!(cat.total_rows(), 3);
        // Re-planning a merged night also yields nothing to do.
        let mut fresh = plan_merge(&p, 0).unwrap();
        assert_eq!(execute_merge(&cat, &p, &mut fresh).unwrap().rows_merged, 0);
        p.truncate_night(0).unwrap();
    }

    #[test]
    fn frozen_target_leaves_entry_pending() {
        let p = pipeline();
        stage(&p, 1, 0, &[(10.0, 10.0), (200.0, -40.0)]);
        p.close_night();
        let cat = CatalogStore::new(CatalogConfig::default()).unwrap();
        let frozen = cat.index().partition_key(10.0, 10.0, 101.0).unwrap();
        cat.create_partition(frozen).unwrap();
        cat.snapshot(&[frozen]).unwrap();
        let mut plan = plan_merge(&p, 0).unwrap();
        let rep = execute_merge(&cat, &p, &mut plan).unwrap();
        assert_eq!(rep.rows_merged, 1);
        assert!(!rep.complete);
        assert_eq!(rep.failures.len(), 1);
        assert_eq!(rep.failures[0].key, frozen);
        assert_eq!(rep.failures[0].code, "FROZEN_PARTITION");
        assert_eq!(plan.pending(), 1);
        assert!(matches!(p.truncate_night(0), Err(Error::MergePending(0))));
    }
}
