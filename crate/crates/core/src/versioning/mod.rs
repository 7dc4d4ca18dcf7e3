//! Immutable releases and per-object version chains.
//!
//! A release freezes a set of catalog partitions and pins, for every object,
//! the version that was current at that moment. Object rows are never
//! rewritten: a correction appends a new version and marks the previous one
//! superseded.

pub mod filemap;
pub mod provenance;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::catalog::{CatalogStore, Checksum, PartitionState, SnapshotId};
use crate::error::{Error, Result};
use crate::index::PartitionKey;
use crate::types::{AstroObject, ObjectId};

/// Release identifier, written `r<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReleaseId(pub u32);

impl fmt::Display for ReleaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl FromStr for ReleaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.strip_prefix('r').unwrap_or(s);
        digits
            .parse()
            .map(ReleaseId)
            .map_err(|_| Error::Parse(format!("bad release id {s:?}")))
    }
}

impl Serialize for ReleaseId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ReleaseId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub release_id: ReleaseId,
    /// Simulated clock reading at creation.
    pub created_at: f64,
    pub snapshot_id: SnapshotId,
    pub checksums: BTreeMap<PartitionKey, Checksum>,
    pub pool: String,
    pub immutable: bool,
    pub objects_pinned: usize,
}

impl Release {
    pub fn contains(&self, key: &PartitionKey) -> bool {
        self.checksums.contains_key(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaStatus {
    Passed,
    Failed,
}

/// Mechanical quality gate: validation summary plus row reconciliation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub status: QaStatus,
    /// Batches rejected by validation; they never reached the catalog.
    pub validation_failures: u64,
    pub rows_received: u64,
    pub rows_merged: u64,
    pub duplicate_rows: u64,
    /// Accepted rows still waiting in ingest tables.
    pub rows_pending: u64,
    /// Interrupted stages whose debris was not yet recovered.
    pub unrecovered_stages: u64,
    pub notes: Vec<String>,
}

impl QaReport {
    pub fn mechanical(
        validation_failures: u64,
        rows_received: u64,
        rows_merged: u64,
        duplicate_rows: u64,
        rows_pending: u64,
        unrecovered_stages: u64,
    ) -> Self {
        let mut notes = Vec::new();
        let accounted = rows_merged + duplicate_rows + rows_pending;
        if accounted != rows_received {
            notes.push(format!(
                "rows received {rows_received} != merged {rows_merged} + duplicates {duplicate_rows} + pending {rows_pending}"
            ));
        }
        if unrecovered_stages > 0 {
            notes.push(format!("{unrecovered_stages} interrupted stages not recovered"));
        }
        let status = if notes.is_empty() {
            QaStatus::Passed
        } else {
            QaStatus::Failed
        };
        QaReport {
            status,
            validation_failures,
            rows_received,
            rows_merged,
            duplicate_rows,
            rows_pending,
            unrecovered_stages,
            notes,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == QaStatus::Passed
    }
}

/// Fixed number of releases spread evenly over a year of nights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseSchedule {
    pub releases_per_year: u32,
    pub nights_per_year: u32,
}

impl ReleaseSchedule {
    pub fn new(releases_per_year: u32) -> Self {
        ReleaseSchedule {
            releases_per_year,
            nights_per_year: 365,
        }
    }

    /// Releases due by the end of the first `nights` nights.
    pub fn due_after(&self, nights: u64) -> u64 {
        nights * self.releases_per_year as u64 / self.nights_per_year as u64
    }

    /// True when a release falls due at the end of night `night_id`.
    pub fn due_at(&self, night_id: u64) -> bool {
        self.due_after(night_id + 1) > self.due_after(night_id)
    }
}

#[derive(Debug, Default)]
pub struct ReleaseRegistry {
    releases: RwLock<BTreeMap<ReleaseId, Release>>,
    /// Serializes release creation.
    create: Mutex<()>,
}

impl ReleaseRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Freezes the live members of `keys` and registers a release covering
    /// all of `keys`. Already-frozen members are carried over unchanged.
    pub fn create_release(
        &self,
        catalog: &CatalogStore,
        keys: &[PartitionKey],
        qa: &QaReport,
        created_at: f64,
        versions: &VersionStore,
    ) -> Result<Release> {
        if !qa.passed() {
            return Err(Error::QaFailed(qa.notes.join("; ")));
        }
        let _one_at_a_time = self.create.lock();
        let keys: BTreeSet<PartitionKey> = keys.iter().copied().collect();
        let mut live = Vec::new();
        let mut carried = BTreeMap::new();
        for k in &keys {
            let part = catalog.partition(k).ok_or(Error::UnknownPartition(*k))?;
            let p = part.read();
            match p.state() {
                PartitionState::Live => live.push(*k),
                PartitionState::FrozenInRelease(_) => {
                    carried.insert(*k, p.checksum());
                }
            }
        }
        if live.is_empty() {
            if let Some(prev) = self.releases.read().values().find(|r| r.checksums == carried) {
                return Err(Error::AlreadyReleased(prev.release_id.to_string()));
            }
        }
        let snap = catalog.snapshot(&live)?;
        let mut checksums = carried;
        checksums.extend(snap.checksums);
        let release_id = ReleaseId(self.releases.read().len() as u32 + 1);
        let objects_pinned = versions.pin_release(release_id);
        let release = Release {
            release_id,
            created_at,
            snapshot_id: snap.id,
            checksums,
            pool: "released".into(),
            immutable: true,
            objects_pinned,
        };
        self.releases.write().insert(release_id, release.clone());
        Ok(release)
    }

    pub fn get(&self, id: ReleaseId) -> Result<Release> {
        self.releases
            .read()
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::UnknownRelease(id.to_string()))
    }

    pub fn latest(&self) -> Option<Release> {
        self.releases.read().values().next_back().cloned()
    }

    pub fn list(&self) -> Vec<Release> {
        self.releases.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.releases.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Partitions of `id` whose current checksum differs from the recorded one.
    pub fn verify(&self, catalog: &CatalogStore, id: ReleaseId) -> Result<Vec<PartitionKey>> {
        let r = self.get(id)?;
        let mut bad = Vec::new();
        for (k, sum) in &r.checksums {
            match catalog.checksum(k) {
                Ok(now) if now == *sum => {}
                _ => bad.push(*k),
            }
        }
        Ok(bad)
    }

    pub fn state(&self) -> Vec<Release> {
        self.list()
    }

    pub fn from_state(releases: Vec<Release>) -> Self {
        let r = ReleaseRegistry::new();
        *r.releases.write() = releases.into_iter().map(|x| (x.release_id, x)).collect();
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectVersion {
    pub object_id: ObjectId,
    pub version: u32,
    pub payload: AstroObject,
    pub superseded_by: Option<u32>,
    /// First release that pinned this version.
    pub created_in_release: Option<ReleaseId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VersionSelector {
    Latest,
    Version(u32),
    AsOfRelease(ReleaseId),
}

impl FromStr for VersionSelector {
    type Err = Error;

    /// `latest`, `v3` or `3`, `release:r1`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "latest" {
            return Ok(VersionSelector::Latest);
        }
        if let Some(r) = s.strip_prefix("release:") {
            return r.parse().map(VersionSelector::AsOfRelease);
        }
        s.strip_prefix('v')
            .unwrap_or(s)
            .parse()
            .map(VersionSelector::Version)
            .map_err(|_| Error::Parse(format!("bad version selector {s:?}")))
    }
}

type Chain = Arc<Mutex<Vec<ObjectVersion>>>;

/// Append-only version chains plus the per-release pins.
#[derive(Debug, Default)]
pub struct VersionStore {
    chains: RwLock<HashMap<ObjectId, Chain>>,
    pins: RwLock<BTreeMap<ReleaseId, HashMap<ObjectId, u32>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VersionState {
    pub versions: Vec<ObjectVersion>,
    pub pins: BTreeMap<ReleaseId, BTreeMap<ObjectId, u32>>,
}

fn same_content(a: &AstroObject, b: &AstroObject) -> bool {
    AstroObject {
        current_version: 0,
        ..*a
    } == AstroObject {
        current_version: 0,
        ..*b
    }
}

impl VersionStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn chain(&self, id: ObjectId) -> Result<Chain> {
        self.chains
            .read()
            .get(&id)
            .cloned()
            .ok_or(Error::UnknownObject(id))
    }

    /// Starts the chain of a new object at version 1.
    pub fn create_object(&self, payload: AstroObject) -> Result<ObjectVersion> {
        let mut map = self.chains.write();
        if map.contains_key(&payload.object_id) {
            return Err(Error::DuplicateObject(payload.object_id));
        }
        let v = ObjectVersion {
            object_id: payload.object_id,
            version: 1,
            payload: AstroObject {
                current_version: 1,
                ..payload
            },
            superseded_by: None,
            created_in_release: None,
        };
        map.insert(payload.object_id, Arc::new(Mutex::new(vec![v])));
        Ok(v)
    }

    /// Appends version `prior + 1` and marks `prior` superseded.
    pub fn new_object_version(&self, id: ObjectId, payload: AstroObject) -> Result<ObjectVersion> {
        let chain = self.chain(id)?;
        let mut c = chain.lock();
        let prior = c.last_mut().expect("chains are never empty");
        let version = prior.version + 1;
        prior.superseded_by = Some(version);
        let v = ObjectVersion {
            object_id: id,
            version,
            payload: AstroObject {
                object_id: id,
                current_version: version,
                ..payload
            },
            superseded_by: None,
            created_in_release: None,
        };
        c.push(v);
        Ok(v)
    }

    /// Creates the chain or appends a version, unless `payload` matches the
    /// latest version already.
    pub fn commit(&self, payload: AstroObject) -> Result<ObjectVersion> {
        match self.chain(payload.object_id) {
            Err(_) => self.create_object(payload),
            Ok(chain) => {
                let latest = *chain.lock().last().expect("chains are never empty");
                if same_content(&latest.payload, &payload) {
                    Ok(latest)
                } else {
                    self.new_object_version(payload.object_id, payload)
                }
            }
        }
    }

    pub fn read_versioned(&self, id: ObjectId, selector: VersionSelector) -> Result<ObjectVersion> {
        let version = match selector {
            VersionSelector::Latest => None,
            VersionSelector::Version(n) => Some(n),
            VersionSelector::AsOfRelease(r) => {
                let pins = self.pins.read();
                let pinned = pins.get(&r).ok_or_else(|| Error::UnknownRelease(r.to_string()))?;
                Some(*pinned.get(&id).ok_or(Error::UnknownObject(id))?)
            }
        };
        let chain = self.chain(id)?;
        let c = chain.lock();
        match version {
            None => Ok(*c.last().expect("chains are never empty")),
            Some(n) => c
                .iter()
                .find(|v| v.version == n)
                .copied()
                .ok_or(Error::UnknownVersion {
                    object_id: id,
                    version: n,
                }),
        }
    }

    pub fn versions(&self, id: ObjectId) -> Result<Vec<ObjectVersion>> {
        Ok(self.chain(id)?.lock().clone())
    }

    pub fn object_count(&self) -> usize {
        self.chains.read().len()
    }

    /// Pins the latest version of every object to `release`.
    pub fn pin_release(&self, release: ReleaseId) -> usize {
        let chains = self.chains.read();
        let mut pinned = HashMap::with_capacity(chains.len());
        for (id, chain) in chains.iter() {
            let mut c = chain.lock();
            let latest = c.last_mut().expect("chains are never empty");
            latest.created_in_release.get_or_insert(release);
            pinned.insert(*id, latest.version);
        }
        let n = pinned.len();
        self.pins.write().insert(release, pinned);
        n
    }

    pub fn has_release(&self, release: ReleaseId) -> bool {
        self.pins.read().contains_key(&release)
    }

    /// Every version of every object, by (object_id, version).
    pub fn export(&self) -> Vec<ObjectVersion> {
        let chains = self.chains.read();
        let mut out: Vec<ObjectVersion> = chains.values().flat_map(|c| c.lock().clone()).collect();
        out.sort_by_key(|v| (v.object_id, v.version));
        out
    }

    pub fn state(&self) -> VersionState {
        VersionState {
            versions: self.export(),
            pins: self
                .pins
                .read()
                .iter()
                .map(|(r, m)| (*r, m.iter().map(|(k, v)| (*k, *v)).collect()))
                .collect(),
        }
    }

    pub fn from_state(state: VersionState) -> Self {
        let store = VersionStore::new();
        {
            let mut chains = store.chains.write();
            for v in state.versions {
                chains
                    .entry(v.object_id)
                    .or_insert_with(|| Arc::new(Mutex::new(Vec::new())))
                    .lock()
                    .push(v);
            }
        }
        *store.pins.write() = state
            .pins
            .into_iter()
            .map(|(r, m)| (r, m.into_iter().collect()))
            .collect();
        store
    }
}
