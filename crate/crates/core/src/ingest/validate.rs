//! Pre-load checks run against a temporary in-memory copy of a batch.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DetectionBatch, IngestConfig, ServerId};
use crate::types::{CcdId, SourceRecord, VisitId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    CoordinateRange,
    FluxInvalid,
    EpochOutsideNight,
    DuplicateSourceId,
    TooManyRecords,
    /// Record does not belong to the batch's visit/CCD.
    BatchMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending record position, when the violation is per record.
    pub index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub visit_id: VisitId,
    pub ccd_id: CcdId,
    pub server_id: ServerId,
    pub record_count: usize,
    pub night_id: u64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// True when this is a passing report for exactly `batch`.
    pub fn covers(&self, batch: &DetectionBatch) -> bool {
        self.ok()
            && self.visit_id == batch.visit_id
            && self.ccd_id == batch.ccd_id
            && self.server_id == batch.server_id
            && self.record_count == batch.records.len()
    }
}

/// Throw-away table the checks run against.
pub(super) struct StagingArea<'a> {
    batch: &'a DetectionBatch,
    rows: Vec<SourceRecord>,
}

impl<'a> StagingArea<'a> {
    pub(super) fn load(batch: &'a DetectionBatch) -> Self {
        StagingArea {
            batch,
            rows: batch.records.clone(),
        }
    }

    pub(super) fn check(self, cfg: &IngestConfig, night_id: u64) -> ValidationReport {
        let mut violations = Vec::new();
        self.count_limit(cfg.max_batch_records, &mut violations);
        self.ownership(cfg.ccd_count, &mut violations);
        self.coordinate_ranges(&mut violations);
        self.flux_values(&mut violations);
        self.epochs_in_night(cfg.night_window(night_id), &mut violations);
        self.unique_source_ids(&mut violations);
        ValidationReport {
            visit_id: self.batch.visit_id,
            ccd_id: self.batch.ccd_id,
            server_id: self.batch.server_id,
            record_count: self.rows.len(),
            night_id,
            violations,
        }
    }

    fn count_limit(&self, max: usize, out: &mut Vec<Violation>) {
        if self.rows.len() > max {
            out.push(Violation {
                kind: ViolationKind::TooManyRecords,
                index: None,
                message: format!("{} records exceed the limit of {max}", self.rows.len()),
            });
        }
    }

    fn ownership(&self, ccd_count: u16, out: &mut Vec<Violation>) {
        if self.batch.ccd_id >= ccd_count {
            out.push(Violation {
                kind: ViolationKind::BatchMismatch,
                index: None,
                message: format!("ccd_id {} outside 0..{ccd_count}", self.batch.ccd_id),
            });
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.visit_id != self.batch.visit_id || r.ccd_id != self.batch.ccd_id {
                out.push(Violation {
                    kind: ViolationKind::BatchMismatch,
                    index: Some(i),
                    message: format!(
                        "record belongs to visit {} ccd {}",
                        r.visit_id, r.ccd_id
                    ),
                });
            }
        }
    }

    fn coordinate_ranges(&self, out: &mut Vec<Violation>) {
        for (i, r) in self.rows.iter().enumerate() {
            if !(r.ra.is_finite() && (0.0..360.0).contains(&r.ra)) {
                out.push(Violation {
                    kind: ViolationKind::CoordinateRange,
                    index: Some(i),
                    message: "ra out of range".into(),
                });
            }
            if !(r.dec.is_finite() && (-90.0..=90.0).contains(&r.dec)) {
                out.push(Violation {
                    kind: ViolationKind::CoordinateRange,
                    index: Some(i),
                    message: "dec out of range".into(),
                });
            }
        }
    }

    fn flux_values(&self, out: &mut Vec<Violation>) {
        for (i, r) in self.rows.iter().enumerate() {
            if !r.flux_valid() {
                out.push(Violation {
                    kind: ViolationKind::FluxInvalid,
                    index: Some(i),
                    message: "flux not finite or negative".into(),
                });
            }
        }
    }

    fn epochs_in_night(&self, (start, end): (f64, f64), out: &mut Vec<Violation>) {
        for (i, r) in self.rows.iter().enumerate() {
            if !(r.epoch.is_finite() && r.epoch >= start && r.epoch <= end) {
                out.push(Violation {
                    kind: ViolationKind::EpochOutsideNight,
                    index: Some(i),
                    message: format!("epoch {} outside night window [{start}, {end}]", r.epoch),
                });
            }
        }
    }

    fn unique_source_ids(&self, out: &mut Vec<Violation>) {
        let mut seen = HashMap::with_capacity(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            if let Some(first) = seen.insert(r.source_id, i) {
                seen.insert(r.source_id, first);
                out.push(Violation {
                    kind: ViolationKind::DuplicateSourceId,
                    index: Some(i),
                    message: "duplicate source_id".into(),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Filter;

    fn rec(id: u64) -> SourceRecord {
        SourceRecord {
            source_id: id,
            visit_id: 1,
            ccd_id: 0,
            ra: 1.0,
            dec: 1.0,
            epoch: 10.0,
            flux: 2.0,
            filter: Filter::I,
        }
    }

    fn report(records: Vec<SourceRecord>) -> ValidationReport {
        let batch = DetectionBatch {
            visit_id: 1,
            ccd_id: 0,
            server_id: ServerId::A,
            records,
            received_at: 0.0,
        };
        StagingArea::load(&batch).check(&IngestConfig::default(), 0)
    }

    #[test]
    fn dec_out_of_range_is_flagged_at_index() {
        let mut recs = vec![rec(1), rec(2), rec(3)];
        recs[1].dec = 123.0;
        let r = report(recs);
        assert_eq!(r.violations.len(), 1);
        let v = &r.violations[0];
        assert_eq!(v.kind, ViolationKind::CoordinateRange);
        assert_eq!(v.index, Some(1));
        assert_eq!(v.message, "dec out of range");
    }

    #[test]
    fn empty_batch_passes() {
        let r = report(Vec::new());
        assert!(r.ok());
        assert_eq!(r.record_count, 0);
    }

    #[test]
    fn duplicate_source_ids_flagged() {
        let r = report(vec![rec(5), rec(6), rec(5)]);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::DuplicateSourceId);
        assert_eq!(r.violations[0].index, Some(2));
        assert_eq!(r.violations[0].message, "duplicate source_id");
    }

    #[test]
    fn flux_epoch_and_count_checks() {
        let mut recs = vec![rec(1), rec(2), rec(3)];
        recs[0].flux = f64::NAN;
        recs[1].flux = -1.0;
        recs[2].epoch = 40_000.0;
        let r = report(recs);
        let kinds: Vec<_> = r.violations.iter().map(|v| v.kind).collect();
        assert_eq!(
            kinds,
            [
                ViolationKind::FluxInvalid,
                ViolationKind::FluxInvalid,
                ViolationKind::EpochOutsideNight
            ]
        );

        let batch = DetectionBatch {
            visit_id: 1,
            ccd_id: 0,
            server_id: ServerId::B,
            records: (0..11).map(rec).collect(),
            received_at: 0.0,
        };
        let cfg = IngestConfig {
            max_batch_records: 10,
            ..IngestConfig::default()
        };
        let r = StagingArea::load(&batch).check(&cfg, 0);
        assert_eq!(r.violations[0].kind, ViolationKind::TooManyRecords);
    }

    #[test]
    fn foreign_records_flagged() {
        let mut recs = vec![rec(1)];
        recs[0].ccd_id = 4;
        let r = report(recs);
        assert_eq!(r.violations[0].kind, ViolationKind::BatchMismatch);
    }
}
