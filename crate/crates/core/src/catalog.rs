//! Partitioned, append-oriented catalog store.
//!
//! Each partition holds the sources of one `(trixel, time bucket)` cell,
//! kept in clustering order, plus the object rows homed there. Partitions
//! are independently lockable. A store-wide barrier lets `snapshot` exclude
//! all writers while it freezes partitions for a release.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
pub use crate::index::PartitionKey;
use crate::index::{ClusterDimension, ConeQuery, EpochRange, IndexConfig, TrixelId};
use crate::types::{AstroObject, ObjectId, SourceRecord};

/// Default partition file target: 64 MiB.
pub const DEFAULT_PARTITION_TARGET_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogConfig {
    pub index: IndexConfig,
    pub partition_target_bytes: u64,
    /// Incoming/existing row ratio above which an insert re-sorts the whole
    /// partition instead of merging the new run in.
    pub resort_fraction: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            index: IndexConfig::default(),
            partition_target_bytes: DEFAULT_PARTITION_TARGET_BYTES,
            resort_fraction: 0.25,
        }
    }
}

/// 256-bit content hash (SHA-256), rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Checksum(pub [u8; 32]);

impl Checksum {
    pub fn of(bytes: &[u8]) -> Self {
        Checksum(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Checksum({self})")
    }
}

impl std::str::FromStr for Checksum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)
            .map_err(|e| Error::Parse(format!("bad checksum {s:?}: {e}")))?;
        Ok(Checksum(out))
    }
}

impl Serialize for Checksum {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Checksum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type SnapshotId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "snapshot")]
pub enum PartitionState {
    Live,
    FrozenInRelease(SnapshotId),
}

/// A source row with its precomputed max-level trixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteredRow {
    pub htm: TrixelId,
    pub record: SourceRecord,
}

fn tail_cmp(a: &SourceRecord, b: &SourceRecord) -> Ordering {
    a.visit_id
        .cmp(&b.visit_id)
        .then(a.ccd_id.cmp(&b.ccd_id))
        .then(a.source_id.cmp(&b.source_id))
}

fn cluster_cmp(dim: ClusterDimension) -> impl Fn(&ClusteredRow, &ClusteredRow) -> Ordering {
    move |a, b| {
        let primary = match dim {
            ClusterDimension::Spatial => a
                .htm
                .cmp(&b.htm)
                .then(a.record.epoch.total_cmp(&b.record.epoch)),
            ClusterDimension::Temporal => a
                .record
                .epoch
                .total_cmp(&b.record.epoch)
                .then(a.htm.cmp(&b.htm)),
        };
        primary.then_with(|| tail_cmp(&a.record, &b.record))
    }
}

/// Row predicate: optional cone plus optional inclusive epoch range.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RowFilter {
    pub cone: Option<ConeQuery>,
    pub epochs: Option<EpochRange>,
}

impl RowFilter {
    pub fn matches(&self, r: &SourceRecord) -> bool {
        self.epochs.is_none_or(|e| e.contains(r.epoch))
            && self.cone.is_none_or(|c| c.contains(r.ra, r.dec))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    key: PartitionKey,
    rows: Vec<ClusteredRow>,
    object_rows: BTreeMap<ObjectId, AstroObject>,
    state: PartitionState,
}

impl Partition {
    fn new(key: PartitionKey) -> Self {
        Partition {
            key,
            rows: Vec::new(),
            object_rows: BTreeMap::new(),
            state: PartitionState::Live,
        }
    }

    pub fn key(&self) -> PartitionKey {
        self.key
    }

    pub fn state(&self) -> PartitionState {
        self.state
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self.state, PartitionState::FrozenInRelease(_))
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn object_count(&self) -> usize {
        self.object_rows.len()
    }

    pub fn byte_size(&self) -> u64 {
        (self.rows.len() * SourceRecord::ENCODED_LEN
            + self.object_rows.len() * AstroObject::ENCODED_LEN) as u64
    }

    pub fn rows(&self) -> &[ClusteredRow] {
        &self.rows
    }

    pub fn records(&self) -> impl Iterator<Item = &SourceRecord> {
        self.rows.iter().map(|r| &r.record)
    }

    pub fn objects(&self) -> impl Iterator<Item = &AstroObject> {
        self.object_rows.values()
    }

    /// Rows satisfying `pred`, in clustering order.
    pub fn scan<'a, P>(&'a self, pred: P) -> impl Iterator<Item = &'a SourceRecord> + 'a
    where
        P: Fn(&SourceRecord) -> bool + 'a,
    {
        self.records().filter(move |r| pred(r))
    }

    /// Canonical encoding: row count, rows in clustering order, object count,
    /// objects by ascending id. Little-endian throughout.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.byte_size() as usize);
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for r in &self.rows {
            r.record.encode_into(&mut out);
        }
        out.extend_from_slice(&(self.object_rows.len() as u64).to_le_bytes());
        for o in self.object_rows.values() {
            o.encode_into(&mut out);
        }
        out
    }

    pub fn checksum(&self) -> Checksum {
        Checksum::of(&self.canonical_bytes())
    }

    /// One JSON source record per line.
    pub fn export_ndjson(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    fn ensure_live(&self) -> Result<()> {
        if self.is_frozen() {
            Err(Error::FrozenPartition(self.key))
        } else {
            Ok(())
        }
    }

    fn merge_rows(&mut self, mut incoming: Vec<ClusteredRow>, cfg: &CatalogConfig) {
        if incoming.is_empty() {
            return;
        }
        let cmp = cluster_cmp(cfg.index.clustering);
        let existing = self.rows.len();
        if incoming.len() as f64 > cfg.resort_fraction * existing as f64 {
            self.rows.append(&mut incoming);
            self.rows.sort_unstable_by(&cmp);
            return;
        }
        incoming.sort_unstable_by(&cmp);
        let old = std::mem::take(&mut self.rows);
        let mut merged = Vec::with_capacity(old.len() + incoming.len());
        let mut a = old.into_iter().peekable();
        let mut b = incoming.into_iter().peekable();
        loop {
            let take_a = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => cmp(x, y) != Ordering::Greater,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let next = if take_a { a.next() } else { b.next() };
            merged.push(next.expect("peeked"));
        }
        self.rows = merged;
    }
}

/// Result of freezing a set of partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: SnapshotId,
    pub checksums: BTreeMap<PartitionKey, Checksum>,
}

/// Serializable image of a whole store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogState {
    pub config: CatalogConfig,
    pub partitions: Vec<Partition>,
    pub snapshots: Vec<Snapshot>,
    pub next_snapshot: SnapshotId,
}

pub struct CatalogStore {
    config: CatalogConfig,
    partitions: RwLock<BTreeMap<PartitionKey, Arc<RwLock<Partition>>>>,
    barrier: RwLock<()>,
    snapshots: RwLock<BTreeMap<SnapshotId, Snapshot>>,
    next_snapshot: AtomicU64,
}

impl CatalogStore {
    pub fn new(config: CatalogConfig) -> Result<Self> {
        config.index.validate()?;
        Ok(CatalogStore {
            config,
            partitions: RwLock::new(BTreeMap::new()),
            barrier: RwLock::new(()),
            snapshots: RwLock::new(BTreeMap::new()),
            next_snapshot: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &CatalogConfig {
        &self.config
    }

    pub fn index(&self) -> &IndexConfig {
        &self.config.index
    }

    /// Shared side of the snapshot barrier. Holding it keeps `snapshot` out;
    /// any number of writers may hold it at once.
    pub fn write_guard(&self) -> RwLockReadGuard<'_, ()> {
        self.barrier.read_recursive()
    }

    pub fn create_partition(&self, key: PartitionKey) -> Result<Arc<RwLock<Partition>>> {
        if key.trixel.level() != self.config.index.partition_level {
            return Err(Error::Config(format!(
                "partition key {key} is not at partition level {}",
                self.config.index.partition_level
            )));
        }
        let mut map = self.partitions.write();
        if map.contains_key(&key) {
            return Err(Error::DuplicatePartition(key));
        }
        let p = Arc::new(RwLock::new(Partition::new(key)));
        map.insert(key, p.clone());
        Ok(p)
    }

    pub fn partition(&self, key: &PartitionKey) -> Option<Arc<RwLock<Partition>>> {
        self.partitions.read().get(key).cloned()
    }

    fn partition_or_create(&self, key: PartitionKey) -> Result<Arc<RwLock<Partition>>> {
        if let Some(p) = self.partition(&key) {
            return Ok(p);
        }
        match self.create_partition(key) {
            Err(Error::DuplicatePartition(_)) => Ok(self.partition(&key).expect("raced create")),
            other => other,
        }
    }

    pub fn keys(&self) -> Vec<PartitionKey> {
        self.partitions.read().keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.partitions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_rows(&self) -> usize {
        self.partitions
            .read()
            .values()
            .map(|p| p.read().row_count())
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.partitions
            .read()
            .values()
            .map(|p| p.read().byte_size())
            .sum()
    }

    /// Keys of partitions that outgrew the configured file target.
    pub fn oversized(&self) -> Vec<PartitionKey> {
        let target = self.config.partition_target_bytes;
        self.partitions
            .read()
            .iter()
            .filter(|(_, p)| p.read().byte_size() > target)
            .map(|(k, _)| *k)
            .collect()
    }

    /// Clusters `records` into the partition at `key`. All records must route
    /// there; nothing is written otherwise.
    pub fn insert_clustered(&self, key: PartitionKey, records: &[SourceRecord]) -> Result<usize> {
        let part = self
            .partition(&key)
            .ok_or(Error::UnknownPartition(key))?;
        self.insert_into(&part, key, records)
    }

    /// Like [`insert_clustered`](Self::insert_clustered) but creates the partition on demand.
    pub fn insert_routed(&self, key: PartitionKey, records: &[SourceRecord]) -> Result<usize> {
        let part = self.partition_or_create(key)?;
        self.insert_into(&part, key, records)
    }

    fn insert_into(
        &self,
        part: &RwLock<Partition>,
        key: PartitionKey,
        records: &[SourceRecord],
    ) -> Result<usize> {
        let idx = &self.config.index;
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            let actual = idx.partition_key(r.ra, r.dec, r.epoch)?;
            if actual != key {
                return Err(Error::WrongPartition {
                    source_id: r.source_id,
                    expected: key,
                    actual,
                });
            }
            rows.push(ClusteredRow {
                htm: idx.trixel(r.ra, r.dec, idx.max_level)?,
                record: *r,
            });
        }
        let _guard = self.write_guard();
        let mut p = part.write();
        p.ensure_live()?;
        p.merge_rows(rows, &self.config);
        Ok(records.len())
    }

    /// Replaces (or adds) object rows in the partition at `key`.
    pub fn upsert_objects(&self, key: PartitionKey, objects: &[AstroObject]) -> Result<usize> {
        let part = self.partition_or_create(key)?;
        let _guard = self.write_guard();
        let mut p = part.write();
        p.ensure_live()?;
        for o in objects {
            p.object_rows.insert(o.object_id, *o);
        }
        Ok(objects.len())
    }

    pub fn scan<P>(&self, key: &PartitionKey, pred: P) -> Result<Vec<SourceRecord>>
    where
        P: Fn(&SourceRecord) -> bool,
    {
        let part = self.partition(key).ok_or(Error::UnknownPartition(*key))?;
        let p = part.read();
        Ok(p.scan(pred).copied().collect())
    }

    pub fn checksum(&self, key: &PartitionKey) -> Result<Checksum> {
        let part = self.partition(key).ok_or(Error::UnknownPartition(*key))?;
        let sum = part.read().checksum();
        Ok(sum)
    }

    pub fn export_ndjson(&self, key: &PartitionKey) -> Result<String> {
        let part = self.partition(key).ok_or(Error::UnknownPartition(*key))?;
        let out = part.read().export_ndjson();
        Ok(out)
    }

    /// Freezes `keys` and records their checksums. Excludes every writer for
    /// its duration; all-or-nothing.
    pub fn snapshot(&self, keys: &[PartitionKey]) -> Result<Snapshot> {
        let _exclusive = self.barrier.write();
        let map = self.partitions.read();
        let mut parts = Vec::with_capacity(keys.len());
        for k in keys {
            let p = map.get(k).ok_or(Error::UnknownPartition(*k))?;
            if p.read().is_frozen() {
                return Err(Error::AlreadyFrozen(*k));
            }
            parts.push((*k, p.clone()));
        }
        let id = self.next_snapshot.fetch_add(1, AtomicOrdering::SeqCst);
        let mut checksums = BTreeMap::new();
        for (k, p) in parts {
            let mut p = p.write();
            p.state = PartitionState::FrozenInRelease(id);
            checksums.insert(k, p.checksum());
        }
        let snap = Snapshot { id, checksums };
        self.snapshots.write().insert(id, snap.clone());
        Ok(snap)
    }

    pub fn snapshot_info(&self, id: SnapshotId) -> Option<Snapshot> {
        self.snapshots.read().get(&id).cloned()
    }

    pub fn state(&self) -> CatalogState {
        let _exclusive = self.barrier.write();
        CatalogState {
            config: self.config,
            partitions: self
                .partitions
                .read()
                .values()
                .map(|p| p.read().clone())
                .collect(),
            snapshots: self.snapshots.read().values().cloned().collect(),
            next_snapshot: self.next_snapshot.load(AtomicOrdering::SeqCst),
        }
    }

    pub fn from_state(state: CatalogState) -> Result<Self> {
        let store = CatalogStore::new(state.config)?;
        {
            let mut map = store.partitions.write();
            for p in state.partitions {
                map.insert(p.key, Arc::new(RwLock::new(p)));
            }
        }
        *store.snapshots.write() = state.snapshots.into_iter().map(|s| (s.id, s)).collect();
        store
            .next_snapshot
            .store(state.next_snapshot, AtomicOrdering::SeqCst);
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Filter;

    fn store() -> CatalogStore {
        CatalogStore::new(CatalogConfig::default()).unwrap()
    }

    fn rec(id: u64, ra: f64, dec: f64, epoch: f64) -> SourceRecord {
        SourceRecord {
            source_id: id,
            visit_id: 1,
            ccd_id: 0,
            ra,
            dec,
            epoch,
            flux: 1.0,
            filter: Filter::G,
        }
    }

    fn key_of(s: &CatalogStore, r: &SourceRecord) -> PartitionKey {
        s.index().partition_key(r.ra, r.dec, r.epoch).unwrap()
    }

    #[test]
    fn create_then_duplicate() {
        let s = store();
        let key = PartitionKey::new("N0000".parse::<TrixelId>().unwrap().ancestor(3).unwrap(), 0);
        let p = s.create_partition(key).unwrap();
        assert_eq!(p.read().row_count(), 0);
        assert!(matches!(
            s.create_partition(key),
            Err(Error::DuplicatePartition(k)) if k == key
        ));
    }

    #[test]
    fn partition_level_enforced() {
        let s = store();
        let key = PartitionKey::new("N01".parse().unwrap(), 0);
        assert!(matches!(s.create_partition(key), Err(Error::Config(_))));
    }

    #[test]
    fn every_level3_cell_accepted() {
        let s = store();
        let mut cells = Vec::new();
        for root in TrixelId::roots() {
            cells.extend(root.descendants_at(3));
        }
        assert_eq!(cells.len(), 512);
        for t in cells {
            s.create_partition(PartitionKey::new(t, 0)).unwrap();
        }
        assert_eq!(s.len(), 512);
    }

    #[test]
    fn empty_insert_is_noop() {
        let s = store();
        let r = rec(1, 10.0, 10.0, 5.0);
        let key = key_of(&s, &r);
        s.create_partition(key).unwrap();
        let before = s.checksum(&key).unwrap();
        assert_eq!(s.insert_clustered(key, &[]).unwrap(), 0);
        assert_eq!(s.checksum(&key).unwrap(), before);
    }

    #[test]
    fn reverse_epoch_order_is_clustered() {
        let s = store();
        let recs: Vec<_> = (0..20)
            .map(|i| rec(i, 10.0 + (i % 3) as f64 * 0.01, 10.0, 1000.0 - i as f64))
            .collect();
        let key = key_of(&s, &recs[0]);
        s.create_partition(key).unwrap();
        s.insert_clustered(key, &recs).unwrap();
        let part = s.partition(&key).unwrap();
        let p = part.read();
        let rows = p.rows();
        assert_eq!(rows.len(), 20);
        for w in rows.windows(2) {
            assert!(
                (w[0].htm, w[0].record.epoch) <= (w[1].htm, w[1].record.epoch),
                "rows out of order"
            );
        }
    }

    #[test]
    fn wrong_partition_rejected_atomically() {
        let s = store();
        let good = rec(1, 10.0, 10.0, 5.0);
        let bad = rec(2, 200.0, -40.0, 5.0);
        let key = key_of(&s, &good);
        s.create_partition(key).unwrap();
        let err = s.insert_clustered(key, &[good, bad]).unwrap_err();
        assert!(matches!(err, Error::WrongPartition { source_id: 2, .. }));
        assert_eq!(s.partition(&key).unwrap().read().row_count(), 0);
    }

    #[test]
    fn scan_predicates() {
        let s = store();
        let recs: Vec<_> = (0..50).map(|i| rec(i, 10.0, 10.0, i as f64 * 10.0)).collect();
        let key = key_of(&s, &recs[0]);
        s.create_partition(key).unwrap();
        s.insert_clustered(key, &recs).unwrap();
        assert_eq!(s.scan(&key, |_| true).unwrap().len(), 50);
        assert_eq!(s.scan(&key, |_| false).unwrap().len(), 0);
        let got = s.scan(&key, |r| (100.0..=200.0).contains(&r.epoch)).unwrap();
        let mut oracle: Vec<_> = recs
            .iter()
            .filter(|r| r.epoch >= 100.0 && r.epoch <= 200.0)
            .map(|r| r.source_id)
            .collect();
        oracle.sort();
        let mut ids: Vec<_> = got.iter().map(|r| r.source_id).collect();
        ids.sort();
        assert_eq!(ids, oracle);
    }

    #[test]
    fn insertion_merge_equals_full_resort() {
        let cfg_merge = CatalogConfig {
            resort_fraction: f64::INFINITY,
            ..CatalogConfig::default()
        };
        let cfg_sort = CatalogConfig {
            resort_fraction: 0.0,
            ..CatalogConfig::default()
        };
        let a = CatalogStore::new(cfg_merge).unwrap();
        let b = CatalogStore::new(cfg_sort).unwrap();
        let recs: Vec<_> = (0..200)
            .map(|i| rec(i, 10.0 + ((i * 37) % 100) as f64 * 1e-3, 10.0, ((i * 91) % 53) as f64))
            .collect();
        let key = key_of(&a, &recs[0]);
        for s in [&a, &b] {
            s.create_partition(key).unwrap();
            for chunk in recs.chunks(17) {
                s.insert_clustered(key, chunk).unwrap();
            }
        }
        assert_eq!(a.checksum(&key).unwrap(), b.checksum(&key).unwrap());
    }

    #[test]
    fn snapshot_freezes_and_checksum_is_stable() {
        let s = store();
        let r1 = rec(1, 10.0, 10.0, 5.0);
        let r2 = rec(2, 200.0, -40.0, 5.0);
        let (k1, k2) = (key_of(&s, &r1), key_of(&s, &r2));
        s.insert_routed(k1, &[r1]).unwrap();
        s.insert_routed(k2, &[r2]).unwrap();
        let snap = s.snapshot(&[k1]).unwrap();
        let sum = snap.checksums[&k1];
        assert!(matches!(
            s.insert_clustered(k1, &[rec(3, 10.0, 10.0, 6.0)]),
            Err(Error::FrozenPartition(_))
        ));
        assert!(matches!(s.upsert_objects(k1, &[]), Err(Error::FrozenPartition(_))));
        s.insert_clustered(k2, &[rec(4, 200.0, -40.0, 6.0)]).unwrap();
        assert_eq!(s.checksum(&k1).unwrap(), sum);
        assert!(matches!(s.snapshot(&[k1]), Err(Error::AlreadyFrozen(_))));
    }

    #[test]
    fn empty_partition_checksum_is_canonical() {
        let s = store();
        let key = PartitionKey::new("S0000".parse().unwrap(), 3);
        s.create_partition(key).unwrap();
        let snap = s.snapshot(&[key]).unwrap();
        let mut empty = Vec::new();
        empty.extend_from_slice(&0u64.to_le_bytes());
        empty.extend_from_slice(&0u64.to_le_bytes());
        assert_eq!(snap.checksums[&key], Checksum::of(&empty));
    }

    #[test]
    fn ndjson_export_uses_record_field_names() {
        let s = store();
        let r = rec(7, 10.0, 10.0, 5.0);
        let key = key_of(&s, &r);
        s.insert_routed(key, &[r]).unwrap();
        let out = s.export_ndjson(&key).unwrap();
        let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
        let fields: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            fields,
            ["ccd_id", "dec", "epoch", "filter", "flux", "ra", "source_id", "visit_id"]
        );
        let back: SourceRecord = serde_json::from_str(out.trim()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn state_round_trip() {
        let s = store();
        let r = rec(7, 10.0, 10.0, 5.0);
        let key = key_of(&s, &r);
        s.insert_routed(key, &[r]).unwrap();
        s.snapshot(&[key]).unwrap();
        let json = serde_json::to_string(&s.state()).unwrap();
        let back = CatalogStore::from_state(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.checksum(&key).unwrap(), s.checksum(&key).unwrap());
        assert!(back.partition(&key).unwrap().read().is_frozen());
        assert_eq!(back.snapshot_info(1).unwrap().checksums.len(), 1);
    }
}
