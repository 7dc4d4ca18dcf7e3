//! Simulated observing nights.
//!
//! [`simulate_night`] drives one night of the synthetic workload through an
//! [`Archive`]: every visit delivers each CCD image twice, the copies are
//! validated and staged (per CCD in parallel), the visit is associated once
//! its images are in, and at the end of the night everything is merged and
//! the ingest tables truncated.
//!
//! By default time is virtual: visits run as fast as the machine allows and
//! alert latency is measured on the simulated clock. With `real_time` the
//! harness sleeps so that simulated seconds track wall seconds, and latency
//! is measured on the wall clock.

pub mod metrics;
pub mod workload;

use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use metrics::{strip_wall, MetricsSink};
pub use workload::{Delivery, VisitPlan, Workload};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::ingest::{AlertType, BudgetConfig, DetectionBatch, NightPhase, ServerId};
use crate::types::SourceRecord;

/// A node outage, in seconds from the start of the night. `end` of `None`
/// means the node stays down for the rest of the night.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub node: String,
    pub start: f64,
    pub end: Option<f64>,
}

impl FailureEvent {
    pub fn covers(&self, node: &str, offset: f64) -> bool {
        self.node == node && offset >= self.start && self.end.is_none_or(|e| offset < e)
    }
}

/// `node@start` or `node@start-end`.
impl FromStr for FailureEvent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("failure {s:?} is not node@start[-end]"));
        let (node, span) = s.trim().rsplit_once('@').ok_or_else(bad)?;
        let (start, end) = match span.split_once('-') {
            Some((a, b)) => (a, Some(b)),
            None => (span, None),
        };
        let start: f64 = start.trim().parse().map_err(|_| bad())?;
        let end = end
            .map(|e| e.trim().parse::<f64>())
            .transpose()
            .map_err(|_| bad())?;
        if node.is_empty() || start < 0.0 || end.is_some_and(|e| e <= start) {
            return Err(bad());
        }
        Ok(FailureEvent {
            node: node.to_string(),
            start,
            end,
        })
    }
}

impl std::fmt::Display for FailureEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.end {
            Some(e) => write!(f, "{}@{}-{}", self.node, self.start, e),
            None => write!(f, "{}@{}", self.node, self.start),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// Seconds between visits.
    pub cadence: f64,
    /// Seconds of observing.
    pub night_length: f64,
    /// Caps the visit count below what cadence and night length allow.
    pub visits_per_night: Option<u64>,
    pub ccd_count: u16,
    /// Persistent objects in each CCD footprint of each field.
    pub sources_per_ccd: u32,
    /// Mean transients per CCD per visit (Poisson).
    pub transient_rate: f64,
    /// Distinct pointings the survey cycles through.
    pub fields: u32,
    pub ccd_size_deg: f64,
    pub position_jitter_arcsec: f64,
    /// Chance that a persistent object shows a 20x flux excursion.
    pub flare_probability: f64,
    /// Processing delay of each server copy, uniform in [min, max).
    pub server_delay_min: f64,
    pub server_delay_max: f64,
    pub real_time: bool,
    /// Emit one metric event per alert.
    pub emit_alerts: bool,
    pub failures: Vec<FailureEvent>,
    /// Merge and truncate when the night ends. When off, the night is left
    /// open with everything staged.
    pub merge_at_end: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            cadence: 13.0,
            night_length: 36_000.0,
            visits_per_night: None,
            ccd_count: 200,
            sources_per_ccd: 2,
            transient_rate: 0.05,
            fields: 30,
            ccd_size_deg: 0.2,
            position_jitter_arcsec: 0.1,
            flare_probability: 0.001,
            server_delay_min: 1.0,
            server_delay_max: 3.0,
            real_time: false,
            emit_alerts: false,
            failures: Vec::new(),
            merge_at_end: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cadence", self.cadence),
            ("night_length", self.night_length),
            ("ccd_size_deg", self.ccd_size_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let non_negative = [
            ("transient_rate", self.transient_rate),
            ("position_jitter_arcsec", self.position_jitter_arcsec),
            ("server_delay_min", self.server_delay_min),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must not be negative")));
            }
        }
        if self.ccd_count == 0 || self.fields == 0 || self.visits_per_night == Some(0) {
            return Err(Error::Config(
                "ccd_count, fields and visits_per_night must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.flare_probability) {
            return Err(Error::Config("flare_probability must be in [0, 1]".into()));
        }
        if !(self.server_delay_max.is_finite() && self.server_delay_max >= self.server_delay_min) {
            return Err(Error::Config(
                "server_delay_max must be at least server_delay_min".into(),
            ));
        }
        if self.ccd_size_deg > 5.0 {
            return Err(Error::Config("ccd_size_deg must be at most 5".into()));
        }
        Ok(())
    }

    pub fn visits_per_night(&self) -> u64 {
        let by_cadence = (self.night_length / self.cadence).floor() as u64;
        self.visits_per_night.map_or(by_cadence, |v| v.min(by_cadence))
    }

    fn ingest_down(&self, server: ServerId, offset: f64) -> bool {
        self.failures
            .iter()
            .any(|f| f.covers(server.node_id(), offset))
    }

    fn is_ingest_node(node: &str) -> bool {
        [ServerId::A, ServerId::B]
            .iter()
            .any(|s| s.node_id() == node)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlertSummary {
    pub count: u64,
    pub new_object: u64,
    pub flux_anomaly: u64,
    pub latency_p50_s: f64,
    pub latency_p99_s: f64,
    pub latency_p100_s: f64,
    pub over_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergeSummary {
    pub night_id: u64,
    pub partitions_touched: usize,
    pub rows_merged: u64,
    pub failures: usize,
    pub complete: bool,
    pub visits_associated_late: usize,
    pub objects_upserted: usize,
    pub versions_created: usize,
    pub replicas_placed: usize,
    pub rows_truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WallTimings {
    pub stage_p50_s: f64,
    pub stage_p99_s: f64,
    pub stage_p100_s: f64,
    pub stage_over_budget: u64,
    pub associate_p100_s: f64,
    pub merge_s: f64,
    pub total_s: f64,
    pub achieved_mb_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NightReport {
    pub seed: u64,
    pub night_id: u64,
    pub visits: u64,
    pub batches_sent: u64,
    pub batches_lost: u64,
    pub batches_rejected: u64,
    pub duplicate_batches: u64,
    pub duplicate_rows: u64,
    /// Rows in delivered batches that passed validation.
    pub rows_received: u64,
    pub rows_staged: u64,
    pub rows_merged: u64,
    pub catalog_rows_added: u64,
    pub objects: u64,
    /// Visits with at least one CCD image that never staged.
    pub incomplete_visits: u64,
    pub alerts: AlertSummary,
    pub merge: MergeSummary,
    pub failures_injected: usize,
    pub failures_survived: usize,
    pub errors: Vec<String>,
    /// Received rows equal catalog rows added plus duplicates, and every
    /// staged row was merged.
    pub reconciled: bool,
    pub budgets: BudgetConfig,
    pub wall: WallTimings,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

const MAX_ERRORS: usize = 100;
const ENCODED_SOURCE_BYTES: f64 = 8.0 * 7.0 + 2.0 + 1.0;

#[derive(Debug, Default)]
struct CcdOutcome {
    lost: u64,
    rejected: u64,
    first_accept: Option<f64>,
    stage_s: Vec<f64>,
    errors: Vec<String>,
}

fn stage_ccd(
    archive: &Archive,
    cfg: &SimConfig,
    night_start: f64,
    records: &[SourceRecord],
    deliveries: &[Delivery],
    pace: Option<Instant>,
) -> CcdOutcome {
    let mut out = CcdOutcome::default();
    for d in deliveries {
        if cfg.ingest_down(d.server_id, d.arrival - night_start) {
            out.lost += 1;
            continue;
        }
        if let Some(origin) = pace {
            sleep_until(origin, d.arrival - night_start);
        }
        let batch = DetectionBatch {
            visit_id: records.first().map_or(0, |r| r.visit_id),
            ccd_id: d.ccd_id,
            server_id: d.server_id,
            records: records.to_vec(),
            received_at: d.arrival,
        };
        let t0 = Instant::now();
        let res = archive.ingest_batch(&batch);
        out.stage_s.push(t0.elapsed().as_secs_f64());
        match res {
            Ok(o) => match o.staged {
                Some(s) if !s.duplicate && out.first_accept.is_none() => {
                    out.first_accept = Some(d.arrival)
                }
                Some(_) => {}
                None => out.rejected += 1,
            },
            Err(e) => out.errors.push(format!(
                "visit {} ccd {} {:?}: {e}",
                batch.visit_id, d.ccd_id, d.server_id
            )),
        }
    }
    out
}

fn sleep_until(origin: Instant, offset: f64) {
    let target = origin + Duration::from_secs_f64(offset.max(0.0));
    let now = Instant::now();
    if target > now {
        std::thread::sleep(target - now);
    }
}

/// Runs the archive's current (open) night. Only configuration problems are
/// returned as errors; pipeline errors land in [`NightReport::errors`].
pub fn simulate_night(
    archive: &Archive,
    cfg: &SimConfig,
    sink: &mut MetricsSink,
) -> Result<NightReport> {
    cfg.validate()?;
    let ingest_cfg = *archive.ingest.config();
    if ingest_cfg.ccd_count != cfg.ccd_count {
        return Err(Error::Config(format!(
            "sim ccd_count {} does not match the store's {}",
            cfg.ccd_count, ingest_cfg.ccd_count
        )));
    }
    if cfg.night_length > ingest_cfg.night_length {
        return Err(Error::Config(format!(
            "sim night_length {} exceeds the store's {}",
            cfg.night_length, ingest_cfg.night_length
        )));
    }
    let night = archive.ingest.night();
    if night.phase != NightPhase::Open {
        return Err(Error::Config(format!(
            "night {} is {:?}; merge it before simulating",
            night.night_id, night.phase
        )));
    }

    let wall_start = Instant::now();
    let budgets = archive.config().budget;
    let night_id = night.night_id;
    let night_start = ingest_cfg.night_window(night_id).0;
    let workload = Workload::new(cfg, cfg.ccd_count, ingest_cfg.day_length);
    let visits = workload.visits_per_night();
    let stats0 = archive.ingest.stats();
    let catalog0 = archive.catalog.total_rows() as u64;
    let pace = cfg.real_time.then_some(wall_start);

    let mut report = NightReport {
        seed: cfg.seed,
        night_id,
        visits,
        failures_injected: cfg.failures.len(),
        budgets,
        ..NightReport::default()
    };
    sink.emit(
        "night_start",
        night_start,
        &json!({"night_id": night_id, "visits": visits, "ccd_count": cfg.ccd_count, "seed": cfg.seed}),
    )?;

    // Outages of catalog nodes go through the balancer; ingest outages only
    // drop deliveries.
    let mut node_failed = vec![false; cfg.failures.len()];
    let mut node_recovered = vec![false; cfg.failures.len()];
    let mut failure_ok = vec![true; cfg.failures.len()];
    let mut apply_node_events = |offset: f64,
                                 sink: &mut MetricsSink,
                                 report: &mut NightReport|
     -> Result<()> {
        for (i, f) in cfg.failures.iter().enumerate() {
            if SimConfig::is_ingest_node(&f.node) {
                continue;
            }
            if !node_failed[i] && offset >= f.start {
                node_failed[i] = true;
                if let Err(e) = archive.balancer.fail_node(&f.node) {
                    failure_ok[i] = false;
                    report.errors.push(format!("fail {}: {e}", f.node));
                }
                let orphaned = orphaned_partitions(archive);
                if orphaned > 0 {
                    failure_ok[i] = false;
                }
                sink.emit(
                    "failure",
                    night_start + f.start,
                    &json!({"node": f.node, "action": "fail", "orphaned_partitions": orphaned}),
                )?;
            }
            if let Some(end) = f.end {
                if node_failed[i] && !node_recovered[i] && offset >= end {
                    node_recovered[i] = true;
                    if let Err(e) = archive.balancer.recover_node(&f.node) {
                        report.errors.push(format!("recover {}: {e}", f.node));
                    }
                    sink.emit(
                        "failure",
                        night_start + end,
                        &json!({"node": f.node, "action": "recover"}),
                    )?;
                }
            }
        }
        Ok(())
    };

    let mut stage_times = Vec::new();
    let mut latencies = Vec::new();
    let mut assoc_max: f64 = 0.0;
    let mut incomplete_offsets = Vec::new();

    for index in 0..visits {
        let plan = workload.visit(night_id, index);
        let offset = plan.start - night_start;
        apply_node_events(offset, sink, &mut report)?;
        archive.set_clock(plan.start);

        let mut per_ccd: Vec<Vec<Delivery>> = vec![Vec::new(); cfg.ccd_count as usize];
        for d in &plan.deliveries {
            per_ccd[d.ccd_id as usize].push(*d);
        }
        report.batches_sent += plan.deliveries.len() as u64;

        let outcomes: Vec<CcdOutcome> = if cfg.real_time {
            // Paced runs stage in global arrival order on this thread.
            let mut outs: Vec<CcdOutcome> =
                (0..cfg.ccd_count).map(|_| CcdOutcome::default()).collect();
            for d in &plan.deliveries {
                let o = stage_ccd(
                    archive,
                    cfg,
                    night_start,
                    &plan.records[d.ccd_id as usize],
                    std::slice::from_ref(d),
                    pace,
                );
                let slot = &mut outs[d.ccd_id as usize];
                slot.lost += o.lost;
                slot.rejected += o.rejected;
                slot.first_accept = slot.first_accept.or(o.first_accept);
                slot.stage_s.extend(o.stage_s);
                slot.errors.extend(o.errors);
            }
            outs
        } else {
            per_ccd
                .par_iter()
                .enumerate()
                .map(|(ccd, ds)| stage_ccd(archive, cfg, night_start, &plan.records[ccd], ds, None))
                .collect()
        };

        let mut lost = 0;
        let mut rejected = 0;
        let mut missing = 0;
        let mut ready = plan.start;
        let mut visit_stage_max: f64 = 0.0;
        for o in outcomes {
            lost += o.lost;
            rejected += o.rejected;
            match o.first_accept {
                Some(t) => ready = ready.max(t),
                None => missing += 1,
            }
            for s in &o.stage_s {
                visit_stage_max = visit_stage_max.max(*s);
            }
            stage_times.extend(o.stage_s);
            for e in o.errors {
                if report.errors.len() < MAX_ERRORS {
                    report.errors.push(e);
                }
            }
        }
        report.batches_lost += lost;
        report.batches_rejected += rejected;
        if missing > 0 {
            report.incomplete_visits += 1;
            incomplete_offsets.push(offset);
        }

        // Associate once every CCD is in, or at the timeout.
        let timeout = plan.start + archive.config().association.visit_timeout;
        let trigger = if missing > 0 { timeout } else { ready.min(timeout) };
        let alert_time = match pace {
            Some(origin) => {
                sleep_until(origin, trigger - night_start);
                night_start + origin.elapsed().as_secs_f64()
            }
            None => trigger,
        };
        archive.set_clock(trigger);
        let t0 = Instant::now();
        let res = archive.associate_visit(plan.visit_id, alert_time);
        let assoc_s = t0.elapsed().as_secs_f64();
        assoc_max = assoc_max.max(assoc_s);

        for a in &res.alerts {
            latencies.push(a.latency_s);
            match a.alert_type {
                AlertType::NewObject => report.alerts.new_object += 1,
                AlertType::FluxAnomaly => report.alerts.flux_anomaly += 1,
            }
            if a.latency_s >= budgets.alert_latency_budget {
                report.alerts.over_budget += 1;
            }
            if cfg.emit_alerts {
                sink.emit(
                    "alert",
                    alert_time,
                    &json!({
                        "visit_id": plan.visit_id,
                        "alert_type": a.alert_type,
                        "object_id": a.object_id,
                        "source_id": a.source_id,
                        "latency_s": a.latency_s,
                    }),
                )?;
            }
        }
        sink.emit(
            "visit",
            plan.start,
            &json!({
                "visit_id": plan.visit_id,
                "field": plan.field,
                "filter": plan.filter,
                "rows": plan.records.iter().map(Vec::len).sum::<usize>(),
                "batches_lost": lost,
                "batches_rejected": rejected,
                "ccds_missing": missing,
                "matched": res.matched.len(),
                "new_objects": res.new_objects.len(),
                "alerts": res.alerts.len(),
                "wall": {"stage_max_s": visit_stage_max, "associate_s": assoc_s},
            }),
        )?;
    }

    let night_end = night_start + cfg.night_length;
    apply_node_events(cfg.night_length, sink, &mut report)?;
    archive.set_clock(night_end);

    let mut merge_s = 0.0;
    if cfg.merge_at_end {
        let t0 = Instant::now();
        match archive.merge_night(true) {
            Ok(m) => {
                report.merge = MergeSummary {
                    night_id: m.merge.night_id,
                    partitions_touched: m.merge.partitions_touched,
                    rows_merged: m.merge.rows_merged as u64,
                    failures: m.merge.failures.len(),
                    complete: m.merge.complete,
                    visits_associated_late: m.visits_associated_late,
                    objects_upserted: m.objects_upserted,
                    versions_created: m.versions_created,
                    replicas_placed: m.replicas_placed,
                    rows_truncated: m.truncate.map_or(0, |t| t.rows_dropped),
                };
                for f in &m.merge.failures {
                    report.errors.push(format!("merge {}: {}", f.key, f.message));
                }
            }
            Err(e) => report.errors.push(format!("merge: {e}")),
        }
        merge_s = t0.elapsed().as_secs_f64();
        sink.emit(
            "merge",
            night_end,
            &json!({"merge": report.merge, "wall": {"merge_s": merge_s}}),
        )?;
    }

    let stats = archive.ingest.stats();
    report.duplicate_batches = stats.duplicate_batches - stats0.duplicate_batches;
    report.duplicate_rows = stats.duplicate_rows - stats0.duplicate_rows;
    report.rows_received = stats.rows_received - stats0.rows_received;
    report.rows_staged = stats.rows_accepted - stats0.rows_accepted;
    report.rows_merged = report.merge.rows_merged;
    report.catalog_rows_added = archive.catalog.total_rows() as u64 - catalog0;
    report.objects = archive.objects.len() as u64;
    report.reconciled = if cfg.merge_at_end {
        report.rows_received == report.catalog_rows_added + report.duplicate_rows
            && report.rows_merged == report.rows_staged
    } else {
        report.rows_received == report.rows_staged + report.duplicate_rows
            && report.catalog_rows_added == 0
    };

    for (i, f) in cfg.failures.iter().enumerate() {
        let window_clean = !incomplete_offsets.iter().any(|&o| {
            o + archive.config().association.visit_timeout >= f.start
                && f.end.is_none_or(|e| o < e)
        });
        if failure_ok[i] && window_clean {
            report.failures_survived += 1;
        }
    }

    latencies.sort_by(f64::total_cmp);
    report.alerts.count = latencies.len() as u64;
    report.alerts.latency_p50_s = percentile(&latencies, 50.0);
    report.alerts.latency_p99_s = percentile(&latencies, 99.0);
    report.alerts.latency_p100_s = percentile(&latencies, 100.0);

    stage_times.sort_by(f64::total_cmp);
    let stage_total: f64 = stage_times.iter().sum();
    report.wall = WallTimings {
        stage_p50_s: percentile(&stage_times, 50.0),
        stage_p99_s: percentile(&stage_times, 99.0),
        stage_p100_s: percentile(&stage_times, 100.0),
        stage_over_budget: stage_times
            .iter()
            .filter(|&&s| s >= budgets.per_image_ingest_budget)
            .count() as u64,
        associate_p100_s: assoc_max,
        merge_s,
        total_s: wall_start.elapsed().as_secs_f64(),
        achieved_mb_per_s: if stage_total > 0.0 {
            report.rows_received as f64 * ENCODED_SOURCE_BYTES / 1e6 / stage_total
        } else {
            0.0
        },
    };
    sink.emit("night_end", night_end, &report)?;
    sink.flush()?;
    Ok(report)
}

fn orphaned_partitions(archive: &Archive) -> usize {
    let topo = archive.balancer.topology();
    topo.hosted_keys()
        .iter()
        .filter(|k| topo.alive_holders(k).next().is_none())
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::ArchiveConfig;

    fn small() -> (ArchiveConfig, SimConfig) {
        let mut a = ArchiveConfig::default();
        a.ingest.ccd_count = 8;
        a.budget.ccd_count = 8;
        let s = SimConfig {
            ccd_count: 8,
            visits_per_night: Some(40),
            fields: 3,
            transient_rate: 0.3,
            ..SimConfig::default()
        };
        (a, s)
    }

    #[test]
    fn failure_event_parse() {
        let f: FailureEvent = "ingest-B@18000-36000".parse().unwrap();
        assert_eq!(f.node, "ingest-B");
        assert_eq!((f.start, f.end), (18000.0, Some(36000.0)));
        assert!(f.covers("ingest-B", 18000.0));
        assert!(!f.covers("ingest-B", 36000.0));
        let open: FailureEvent = "node-3@5".parse().unwrap();
        assert!(open.covers("node-3", 1e9));
        assert_eq!(open.to_string(), "node-3@5");
        for bad in ["x", "@3", "n@-1", "n@5-2", "n@a"] {
            assert!(bad.parse::<FailureEvent>().is_err(), "{bad}");
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 2.0);
        assert_eq!(percentile(&v, 99.0), 4.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn visit_count_from_cadence() {
        let s = SimConfig::default();
        assert_eq!(s.visits_per_night(), 36_000 / 13);
        let capped = SimConfig {
            visits_per_night: Some(5),
            ..s
        };
        assert_eq!(capped.visits_per_night(), 5);
    }

    #[test]
    fn small_night_reconciles() {
        let (a, s) = small();
        let archive = Archive::new(a).unwrap();
        let mut sink = MetricsSink::memory();
        let r = simulate_night(&archive, &s, &mut sink).unwrap();
        assert_eq!(r.visits, 40);
        assert_eq!(r.batches_sent, 40 * 8 * 2);
        assert_eq!(r.duplicate_batches, 40 * 8);
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert!(r.reconciled);
        assert_eq!(r.rows_staged, r.rows_merged);
        assert_eq!(r.incomplete_visits, 0);
        assert!(r.alerts.count > 0);
        assert!(r.alerts.latency_p100_s < 13.0 + 1e-9);
        assert_eq!(archive.ingest.night().night_id, 1);
        assert_eq!(archive.ingest.total_rows(), 0);
        let last = sink.lines().last().unwrap();
        assert!(last.starts_with(r#"{"event":"night_end""#));
    }

    #[test]
    fn config_mismatch_is_an_error() {
        let (a, mut s) = small();
        s.ccd_count = 9;
        let archive = Archive::new(a).unwrap();
        assert!(matches!(
            simulate_night(&archive, &s, &mut MetricsSink::null()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn losing_server_b_keeps_every_row() {
        let (a, s) = small();
        let base = simulate_night(&Archive::new(a.clone()).unwrap(), &s, &mut MetricsSink::null())
            .unwrap();
        let failing = SimConfig {
            failures: vec!["ingest-B@100-400".parse().unwrap()],
            ..s
        };
        let r = simulate_night(&Archive::new(a).unwrap(), &failing, &mut MetricsSink::null())
            .unwrap();
        assert!(r.batches_lost > 0);
        assert_eq!(r.rows_staged, base.rows_staged);
        assert_eq!(r.failures_survived, 1);
        assert!(r.reconciled);
    }
}
