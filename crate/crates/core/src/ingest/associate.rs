//! Source-to-object association and transient alerts.
//!
//! Fresh sources of a visit are matched to the nearest known object within
//! the match radius. Candidate objects come only from the index chunks of the
//! partitions covering the source's neighborhood. Unmatched sources found new
//! objects. New objects and large flux excursions raise alerts.

use std::collections::{BTreeSet, HashMap};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{IngestPipeline, StagedRow};
use crate::index::geom::{self, angle};
use crate::index::{cone_cover, ConeQuery, IndexChunk, IndexConfig, PartitionKey, TrixelId};
use crate::types::{AstroObject, ObjectId, SourceId, SourceRecord, VisitId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    pub match_radius_arcsec: f64,
    /// Flux deviation, in running standard deviations, that raises an alert.
    pub alert_sigma: f64,
    /// Sources an object needs before flux alerts are considered.
    pub min_prior_sources: u64,
    /// Seconds after a visit starts before association runs on whatever arrived.
    pub visit_timeout: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            match_radius_arcsec: 1.0,
            alert_sigma: 5.0,
            min_prior_sources: 3,
            visit_timeout: 13.0,
        }
    }
}

impl AssociationConfig {
    pub fn radius_deg(&self) -> f64 {
        self.match_radius_arcsec / 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertType {
    NewObject,
    FluxAnomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_type: AlertType,
    pub object_id: ObjectId,
    pub source_id: SourceId,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssociationResult {
    pub visit_id: VisitId,
    pub matched: Vec<(SourceId, ObjectId)>,
    pub new_objects: Vec<ObjectId>,
    pub alerts: Vec<Alert>,
    /// Partition-level cells whose object chunks were read.
    pub cells_consulted: BTreeSet<TrixelId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ObjectEntry {
    object: AstroObject,
    /// Partition the object row lives in (fixed at creation).
    home: PartitionKey,
    /// Max-level trixel of the current mean position.
    htm: TrixelId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectTableState {
    pub objects: Vec<(AstroObject, PartitionKey)>,
    pub next_id: ObjectId,
    pub dirty: BTreeSet<ObjectId>,
}

struct ObjectTable {
    objects: HashMap<ObjectId, ObjectEntry>,
    chunks: HashMap<TrixelId, IndexChunk<ObjectId>>,
    next_id: ObjectId,
    dirty: BTreeSet<ObjectId>,
}

impl ObjectTable {
    fn new() -> Self {
        ObjectTable {
            objects: HashMap::new(),
            chunks: HashMap::new(),
            next_id: 1,
            dirty: BTreeSet::new(),
        }
    }

    fn index_insert(&mut self, idx: &IndexConfig, id: ObjectId, htm: TrixelId) {
        let prefix = htm.ancestor(idx.partition_level).expect("max level >= partition level");
        self.chunks
            .entry(prefix)
            .or_insert_with(|| IndexChunk::new(prefix))
            .insert(htm, id);
    }

    fn index_remove(&mut self, idx: &IndexConfig, id: ObjectId, htm: TrixelId) {
        let prefix = htm.ancestor(idx.partition_level).expect("max level >= partition level");
        if let Some(c) = self.chunks.get_mut(&prefix) {
            c.remove(htm, &id);
        }
    }

    fn insert(&mut self, idx: &IndexConfig, object: AstroObject, home: PartitionKey) {
        let htm = idx
            .trixel(object.ra, object.dec, idx.max_level)
            .expect("object coordinates valid");
        self.index_insert(idx, object.object_id, htm);
        self.next_id = self.next_id.max(object.object_id + 1);
        self.objects
            .insert(object.object_id, ObjectEntry { object, home, htm });
    }

    /// Objects indexed under `cell`, plus the partition-level cells touched.
    fn candidates(
        &self,
        idx: &IndexConfig,
        cell: TrixelId,
        consulted: &mut BTreeSet<TrixelId>,
        out: &mut Vec<ObjectId>,
    ) {
        if cell.level() >= idx.partition_level {
            let prefix = cell.ancestor(idx.partition_level).expect("deeper cell");
            consulted.insert(prefix);
            if let Some(chunk) = self.chunks.get(&prefix) {
                out.extend(chunk.under(cell).copied());
            }
        } else {
            for (prefix, chunk) in &self.chunks {
                if cell.contains_id(*prefix) {
                    consulted.insert(*prefix);
                    out.extend(chunk.under(*prefix).copied());
                }
            }
        }
    }
}

/// Max-level cells covering the match cap around `p`. Usually that is just
/// the source's own cell, which is checked directly before falling back to
/// a full cone cover.
fn neighborhood(idx: &IndexConfig, src: &SourceRecord, htm: TrixelId, radius_deg: f64) -> Vec<TrixelId> {
    let p = geom::radec_to_vec(src.ra, src.dec);
    let clearance = radius_deg.to_radians().sin() + 1e-12;
    if htm.level() == idx.max_level && htm.triangle().margin(p) > clearance {
        return vec![htm];
    }
    let cone = ConeQuery {
        center_ra: src.ra,
        center_dec: src.dec,
        radius: radius_deg,
    };
    cone_cover(&cone, idx.max_level).into_iter().collect()
}

pub struct Associator {
    config: AssociationConfig,
    index: IndexConfig,
    table: RwLock<ObjectTable>,
}

impl Associator {
    pub fn new(config: AssociationConfig, index: IndexConfig) -> Self {
        Associator {
            config,
            index,
            table: RwLock::new(ObjectTable::new()),
        }
    }

    pub fn config(&self) -> &AssociationConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.table.read().objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: ObjectId) -> Option<AstroObject> {
        self.table.read().objects.get(&id).map(|e| e.object)
    }

    pub fn home_of(&self, id: ObjectId) -> Option<PartitionKey> {
        self.table.read().objects.get(&id).map(|e| e.home)
    }

    /// All objects, by ascending id.
    pub fn objects(&self) -> Vec<AstroObject> {
        let t = self.table.read();
        let mut v: Vec<_> = t.objects.values().map(|e| e.object).collect();
        v.sort_by_key(|o| o.object_id);
        v
    }

    /// Adds a historical object, e.g. when loading an existing catalog.
    pub fn insert_object(&self, object: AstroObject) {
        let home = self
            .index
            .partition_key(object.ra, object.dec, object.first_epoch)
            .expect("object coordinates valid");
        self.table.write().insert(&self.index, object, home);
    }

    /// Takes the ids touched since the last call, with their current rows and homes.
    pub fn drain_dirty(&self) -> Vec<(AstroObject, PartitionKey)> {
        let mut t = self.table.write();
        let dirty = std::mem::take(&mut t.dirty);
        dirty
            .into_iter()
            .filter_map(|id| t.objects.get(&id).map(|e| (e.object, e.home)))
            .collect()
    }

    pub fn set_version(&self, id: ObjectId, version: u32) {
        if let Some(e) = self.table.write().objects.get_mut(&id) {
            e.object.current_version = version;
        }
    }

    /// Nearest object within the match radius; ties go to the lower id.
    pub fn nearest(&self, src: &SourceRecord) -> Option<(ObjectId, f64)> {
        let htm = self.index.trixel(src.ra, src.dec, self.index.max_level).ok()?;
        let t = self.table.read();
        self.nearest_in(&t, src, htm, &mut BTreeSet::new())
    }

    fn nearest_in(
        &self,
        t: &ObjectTable,
        src: &SourceRecord,
        htm: TrixelId,
        consulted: &mut BTreeSet<TrixelId>,
    ) -> Option<(ObjectId, f64)> {
        let radius = self.config.radius_deg();
        let p = geom::radec_to_vec(src.ra, src.dec);
        let mut ids = Vec::new();
        for cell in neighborhood(&self.index, src, htm, radius) {
            t.candidates(&self.index, cell, consulted, &mut ids);
        }
        let limit = radius.to_radians();
        ids.into_iter()
            .filter_map(|id| {
                let o = &t.objects[&id].object;
                let d = angle(p, geom::radec_to_vec(o.ra, o.dec));
                (d <= limit).then_some((id, d))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(id, d)| (id, d.to_degrees()))
    }

    /// Associates every staged source of `visit`. `alert_time` is the pipeline
    /// clock reading at which alerts are emitted.
    pub fn associate(
        &self,
        pipeline: &IngestPipeline,
        visit: VisitId,
        alert_time: f64,
    ) -> AssociationResult {
        let rows = pipeline.visit_rows(visit);
        self.associate_rows(visit, &rows, alert_time)
    }

    /// Core of [`associate`](Self::associate): `rows` pairs each staged
    /// source with its batch arrival time.
    pub fn associate_rows(
        &self,
        visit: VisitId,
        rows: &[(StagedRow, f64)],
        alert_time: f64,
    ) -> AssociationResult {
        let mut t = self.table.write();
        let mut result = AssociationResult {
            visit_id: visit,
            ..AssociationResult::default()
        };

        // Match against the pre-visit object set only.
        let matches: Vec<Option<ObjectId>> = rows
            .iter()
            .map(|(row, _)| {
                self.nearest_in(&t, &row.record, row.htm, &mut result.cells_consulted)
                    .map(|(id, _)| id)
            })
            .collect();

        for ((row, received_at), m) in rows.iter().zip(matches) {
            let src = &row.record;
            let latency_s = alert_time - received_at;
            match m {
                Some(id) => {
                    result.matched.push((src.source_id, id));
                    let old_htm;
                    let new_htm;
                    {
                        let e = t.objects.get_mut(&id).expect("matched object exists");
                        let o = &mut e.object;
                        if o.n_sources >= self.config.min_prior_sources {
                            let dev = (src.flux - o.flux_mean).abs();
                            if dev > self.config.alert_sigma * o.flux_std() {
                                result.alerts.push(Alert {
                                    alert_type: AlertType::FluxAnomaly,
                                    object_id: id,
                                    source_id: src.source_id,
                                    latency_s,
                                });
                            }
                        }
                        o.absorb(src);
                        old_htm = e.htm;
                        new_htm = self
                            .index
                            .trixel(o.ra, o.dec, self.index.max_level)
                            .expect("mean position valid");
                        e.htm = new_htm;
                    }
                    if old_htm != new_htm {
                        t.index_remove(&self.index, id, old_htm);
                        t.index_insert(&self.index, id, new_htm);
                    }
                    t.dirty.insert(id);
                }
                None => {
                    let id = t.next_id;
                    let object = AstroObject::from_source(id, src);
                    let home = self
                        .index
                        .partition_key(src.ra, src.dec, src.epoch)
                        .expect("staged source valid");
                    t.insert(&self.index, object, home);
                    t.dirty.insert(id);
                    result.new_objects.push(id);
                    result.alerts.push(Alert {
                        alert_type: AlertType::NewObject,
                        object_id: id,
                        source_id: src.source_id,
                        latency_s,
                    });
                }
            }
        }
        result
    }

    pub fn state(&self) -> ObjectTableState {
        let t = self.table.read();
        let mut objects: Vec<_> = t.objects.values().map(|e| (e.object, e.home)).collect();
        objects.sort_by_key(|(o, _)| o.object_id);
        ObjectTableState {
            objects,
            next_id: t.next_id,
            dirty: t.dirty.clone(),
        }
    }

    pub fn from_state(config: AssociationConfig, index: IndexConfig, state: ObjectTableState) -> Self {
        let a = Associator::new(config, index);
        {
            let mut t = a.table.write();
            for (o, home) in state.objects {
                t.insert(&a.index, o, home);
            }
            t.next_id = t.next_id.max(state.next_id);
            t.dirty = state.dirty;
        }
        a
    }
}
