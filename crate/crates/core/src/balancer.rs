//! Simulated replica topology: nodes, heat tracking and rebalancing.
//!
//! Nodes are in-process records with a capacity in partition replicas.
//! Replicas are logical: hosting a partition records the partition checksum
//! at copy time, no bytes are duplicated. Topology changes go through one
//! registry lock and publish a new immutable view; readers just clone the
//! current `Arc`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogStore, Checksum};
use crate::error::{Error, Result};
use crate::index::PartitionKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Base,
    Archive,
    Dac,
    Enduser,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Base => "base",
            Tier::Archive => "archive",
            Tier::Dac => "dac",
            Tier::Enduser => "enduser",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Tier::Base),
            "archive" => Ok(Tier::Archive),
            "dac" => Ok(Tier::Dac),
            "enduser" => Ok(Tier::Enduser),
            _ => Err(Error::Parse(format!("unknown tier {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replica {
    pub checksum: Checksum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub tier: Tier,
    pub farm: String,
    pub capacity: usize,
    pub hosted: BTreeMap<PartitionKey, Replica>,
    pub alive: bool,
}

impl NodeDescriptor {
    pub fn new(node_id: &str, tier: Tier, farm: &str, capacity: usize) -> Self {
        NodeDescriptor {
            node_id: node_id.into(),
            tier,
            farm: farm.into(),
            capacity,
            hosted: BTreeMap::new(),
            alive: true,
        }
    }

    pub fn hosts(&self, key: &PartitionKey) -> bool {
        self.hosted.contains_key(key)
    }

    pub fn spare(&self) -> usize {
        self.capacity.saturating_sub(self.hosted.len())
    }
}

/// One immutable version of the topology.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub version: u64,
    pub nodes: BTreeMap<String, NodeDescriptor>,
}

impl Topology {
    pub fn node(&self, id: &str) -> Result<&NodeDescriptor> {
        self.nodes.get(id).ok_or_else(|| Error::UnknownNode(id.into()))
    }

    /// Nodes hosting `key`, alive or not, by node id.
    pub fn holders<'a>(&'a self, key: &'a PartitionKey) -> impl Iterator<Item = &'a NodeDescriptor> {
        self.nodes.values().filter(move |n| n.hosts(key))
    }

    pub fn alive_holders<'a>(
        &'a self,
        key: &'a PartitionKey,
    ) -> impl Iterator<Item = &'a NodeDescriptor> {
        self.holders(key).filter(|n| n.alive)
    }

    pub fn hosted_keys(&self) -> BTreeSet<PartitionKey> {
        self.nodes
            .values()
            .flat_map(|n| n.hosted.keys().copied())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancerConfig {
    /// Heat window length in simulated seconds.
    pub window: f64,
    pub threshold_factor: f64,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        BalancerConfig {
            window: 60.0,
            threshold_factor: 3.0,
        }
    }
}

/// Access counts of one closed window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowHeat {
    pub window: u64,
    pub partitions: BTreeMap<PartitionKey, u64>,
    pub nodes: BTreeMap<String, u64>,
}

#[derive(Debug, Default)]
struct HeatWindow {
    index: u64,
    counters: HashMap<(PartitionKey, String), Arc<AtomicU64>>,
}

impl HeatWindow {
    fn totals(&self) -> WindowHeat {
        let mut partitions = BTreeMap::new();
        let mut nodes = BTreeMap::new();
        for ((k, n), c) in &self.counters {
            let v = c.load(Ordering::Relaxed);
            *partitions.entry(*k).or_insert(0) += v;
            *nodes.entry(n.clone()).or_insert(0) += v;
        }
        WindowHeat {
            window: self.index,
            partitions,
            nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebalanceAction {
    pub key: PartitionKey,
    pub source_node: String,
    pub target_node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNote {
    pub key: PartitionKey,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RebalancePlan {
    pub hotspots: Vec<PartitionKey>,
    pub actions: Vec<RebalanceAction>,
    pub notes: Vec<PlanNote>,
    /// Modelled max per-node load before and after the plan.
    pub max_load_before: f64,
    pub max_load_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub applied: Vec<RebalanceAction>,
    pub notes: Vec<PlanNote>,
    pub topology_version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancerState {
    pub config: BalancerConfig,
    pub topology: Topology,
    pub clock: f64,
    pub current: WindowHeat,
    pub archived: Vec<WindowHeat>,
}

pub struct Balancer {
    config: BalancerConfig,
    topology: RwLock<Arc<Topology>>,
    registry: Mutex<()>,
    heat: RwLock<HeatWindow>,
    archived: Mutex<Vec<WindowHeat>>,
    clock: Mutex<f64>,
}

/// Per-node load when every access goes to the least-loaded holder of its
/// key. Accesses are interleaved round-robin across keys, in units scaled so
/// that at most `MODEL_UNITS` are replayed.
fn model_loads(
    nodes: &[String],
    holders: &BTreeMap<PartitionKey, Vec<String>>,
    heat: &BTreeMap<PartitionKey, f64>,
) -> BTreeMap<String, f64> {
    const MODEL_UNITS: f64 = 100_000.0;
    let mut loads: BTreeMap<String, f64> = nodes.iter().map(|n| (n.clone(), 0.0)).collect();
    let total: f64 = heat.values().sum();
    let unit = (total / MODEL_UNITS).max(1.0);
    let mut pending: Vec<(&[String], u64)> = heat
        .iter()
        .filter_map(|(k, h)| {
            let hs = holders.get(k)?.as_slice();
            (!hs.is_empty()).then(|| (hs, (h / unit).round() as u64))
        })
        .collect();
    while pending.iter().any(|(_, n)| *n > 0) {
        for (hs, n) in pending.iter_mut().filter(|(_, n)| *n > 0) {
            let best = hs
                .iter()
                .min_by(|a, b| loads[*a].total_cmp(&loads[*b]).then(a.cmp(b)))
                .expect("non-empty holders");
            *loads.get_mut(best).expect("holder is a node") += unit;
            *n -= 1;
        }
    }
    loads
}

fn note(key: PartitionKey, err: &Error) -> PlanNote {
    PlanNote {
        key,
        code: err.code().into(),
        message: err.to_string(),
    }
}

impl Balancer {
    pub fn new(config: BalancerConfig) -> Result<Self> {
        if !(config.window.is_finite() && config.window > 0.0) {
            return Err(Error::Config("heat window must be positive".into()));
        }
        if !(config.threshold_factor > 1.0) {
            return Err(Error::Config("threshold_factor must exceed 1".into()));
        }
        Ok(Balancer {
            config,
            topology: RwLock::new(Arc::new(Topology::default())),
            registry: Mutex::new(()),
            heat: RwLock::new(HeatWindow::default()),
            archived: Mutex::new(Vec::new()),
            clock: Mutex::new(0.0),
        })
    }

    pub fn config(&self) -> &BalancerConfig {
        &self.config
    }

    /// Current topology view.
    pub fn topology(&self) -> Arc<Topology> {
        self.topology.read().clone()
    }

    /// Applies `f` to a copy of the topology and publishes it.
    fn mutate<T>(&self, f: impl FnOnce(&mut Topology) -> Result<T>) -> Result<T> {
        let _serial = self.registry.lock();
        let mut next = (*self.topology()).clone();
        let out = f(&mut next)?;
        next.version += 1;
        *self.topology.write() = Arc::new(next);
        Ok(out)
    }

    pub fn add_node(&self, node: NodeDescriptor) -> Result<()> {
        self.mutate(|t| {
            if t.nodes.contains_key(&node.node_id) {
                return Err(Error::DuplicateNode(node.node_id.clone()));
            }
            t.nodes.insert(node.node_id.clone(), node);
            Ok(())
        })
    }

    /// Places a replica of `key` on `node_id`, recording today's checksum.
    pub fn host(&self, catalog: &CatalogStore, node_id: &str, key: PartitionKey) -> Result<()> {
        let checksum = catalog.checksum(&key)?;
        self.mutate(|t| {
            let n = t
                .nodes
                .get_mut(node_id)
                .ok_or_else(|| Error::UnknownNode(node_id.into()))?;
            if !n.hosts(&key) && n.spare() == 0 {
                return Err(Error::NoCapacity(key));
            }
            n.hosted.insert(key, Replica { checksum });
            Ok(())
        })
    }

    /// Spreads `copies` replicas of each key over distinct nodes of `tier`,
    /// fewest-hosted first.
    pub fn distribute(
        &self,
        catalog: &CatalogStore,
        keys: &[PartitionKey],
        tier: Tier,
        copies: usize,
    ) -> Result<()> {
        let sums = keys
            .iter()
            .map(|k| Ok((*k, catalog.checksum(k)?)))
            .collect::<Result<Vec<_>>>()?;
        self.mutate(|t| {
            for (key, checksum) in sums {
                let mut have = t.alive_holders(&key).filter(|n| n.tier == tier).count();
                while have < copies {
                    let target = t
                        .nodes
                        .values()
                        .filter(|n| n.tier == tier && n.alive && !n.hosts(&key) && n.spare() > 0)
                        .min_by(|a, b| a.hosted.len().cmp(&b.hosted.len()).then(a.node_id.cmp(&b.node_id)))
                        .map(|n| n.node_id.clone())
                        .ok_or(Error::NoCapacity(key))?;
                    t.nodes
                        .get_mut(&target)
                        .expect("chosen node exists")
                        .hosted
                        .insert(key, Replica { checksum });
                    have += 1;
                }
            }
            Ok(())
        })
    }

    pub fn fail_node(&self, node_id: &str) -> Result<()> {
        self.set_alive(node_id, false)
    }

    pub fn recover_node(&self, node_id: &str) -> Result<()> {
        self.set_alive(node_id, true)
    }

    fn set_alive(&self, node_id: &str, alive: bool) -> Result<()> {
        self.mutate(|t| {
            t.nodes
                .get_mut(node_id)
                .ok_or_else(|| Error::UnknownNode(node_id.into()))?
                .alive = alive;
            Ok(())
        })
    }

    /// Advances the simulated clock; crossing a window boundary archives the
    /// current counters and starts from zero.
    pub fn set_time(&self, t: f64) {
        let mut clock = self.clock.lock();
        *clock = clock.max(t);
        let index = (*clock / self.config.window).floor() as u64;
        let mut heat = self.heat.write();
        if index > heat.index {
            let closed = heat.totals();
            self.archived.lock().push(closed);
            *heat = HeatWindow {
                index,
                counters: HashMap::new(),
            };
        }
    }

    pub fn now(&self) -> f64 {
        *self.clock.lock()
    }

    /// Counts one access of `key` served by `node_id`.
    pub fn record_access(&self, key: PartitionKey, node_id: &str) -> Result<u64> {
        let topo = self.topology();
        if !topo.node(node_id)?.hosts(&key) {
            return Err(Error::NotHosted(key, node_id.into()));
        }
        let id = (key, node_id.to_string());
        if let Some(c) = self.heat.read().counters.get(&id) {
            return Ok(c.fetch_add(1, Ordering::Relaxed) + 1);
        }
        let c = self.heat.write().counters.entry(id).or_default().clone();
        Ok(c.fetch_add(1, Ordering::Relaxed) + 1)
    }

    /// Current-window totals.
    pub fn current_heat(&self) -> WindowHeat {
        self.heat.read().totals()
    }

    pub fn archived_windows(&self) -> Vec<WindowHeat> {
        self.archived.lock().clone()
    }

    pub fn heat(&self, key: &PartitionKey) -> u64 {
        self.heat
            .read()
            .counters
            .iter()
            .filter(|((k, _), _)| k == key)
            .map(|(_, c)| c.load(Ordering::Relaxed))
            .sum()
    }

    pub fn node_load(&self, node_id: &str) -> u64 {
        self.heat
            .read()
            .counters
            .iter()
            .filter(|((_, n), _)| n == node_id)
            .map(|(_, c)| c.load(Ordering::Relaxed))
            .sum()
    }

    /// Hosted partitions whose heat exceeds `factor` times the mean heat over
    /// all hosted partitions. Empty when there has been no traffic.
    pub fn detect_hotspots(&self, factor: f64) -> Result<Vec<PartitionKey>> {
        if !(factor > 1.0) {
            return Err(Error::Config("threshold factor must exceed 1".into()));
        }
        let hosted = self.topology().hosted_keys();
        if hosted.is_empty() {
            return Ok(Vec::new());
        }
        let heat = self.current_heat().partitions;
        let total: u64 = hosted.iter().map(|k| heat.get(k).copied().unwrap_or(0)).sum();
        if total == 0 {
            return Ok(Vec::new());
        }
        let mean = total as f64 / hosted.len() as f64;
        Ok(hosted
            .into_iter()
            .filter(|k| heat.get(k).copied().unwrap_or(0) as f64 > factor * mean)
            .collect())
    }

    /// Adds one replica per hot partition on the least-loaded alive node of a
    /// farm that already serves it. Each candidate is checked by replaying
    /// the window's heat through least-loaded routing on the new holder set;
    /// a placement that would raise the max node load, or that finds no
    /// room, becomes a note.
    pub fn plan_rebalance(&self, hotspots: &[PartitionKey]) -> RebalancePlan {
        let topo = self.topology();
        let mut key_heat: BTreeMap<PartitionKey, f64> = BTreeMap::new();
        for ((k, _), c) in self.heat.read().counters.iter() {
            *key_heat.entry(*k).or_default() += c.load(Ordering::Relaxed) as f64;
        }
        let mut holders: BTreeMap<PartitionKey, Vec<String>> = key_heat
            .keys()
            .map(|k| (*k, topo.alive_holders(k).map(|n| n.node_id.clone()).collect()))
            .collect();
        let node_ids: Vec<String> = topo.nodes.keys().cloned().collect();
        let max_of = |l: &BTreeMap<String, f64>| l.values().copied().fold(0.0, f64::max);

        let mut loads = model_loads(&node_ids, &holders, &key_heat);
        let mut plan = RebalancePlan {
            hotspots: hotspots.to_vec(),
            max_load_before: max_of(&loads),
            ..RebalancePlan::default()
        };
        let mut added: HashMap<String, usize> = HashMap::new();

        let heat_of = |k: &PartitionKey| key_heat.get(k).copied().unwrap_or(0.0);
        let mut order: Vec<PartitionKey> = hotspots.to_vec();
        order.sort_by(|a, b| heat_of(b).total_cmp(&heat_of(a)).then(a.cmp(b)));

        for key in order {
            let current: Vec<&NodeDescriptor> = topo.alive_holders(&key).collect();
            let Some(source) = current.first() else {
                plan.notes.push(note(key, &Error::UnavailablePartition(key)));
                continue;
            };
            let farms: BTreeSet<&str> = current.iter().map(|n| n.farm.as_str()).collect();
            let taken = holders.get(&key).cloned().unwrap_or_default();
            let target = topo
                .nodes
                .values()
                .filter(|n| {
                    n.alive
                        && farms.contains(n.farm.as_str())
                        && !taken.contains(&n.node_id)
                        && n.spare() > added.get(&n.node_id).copied().unwrap_or(0)
                })
                .min_by(|a, b| {
                    loads[&a.node_id]
                        .total_cmp(&loads[&b.node_id])
                        .then(a.hosted.len().cmp(&b.hosted.len()))
                        .then(a.node_id.cmp(&b.node_id))
                });
            let Some(target) = target else {
                plan.notes.push(note(key, &Error::NoCapacity(key)));
                continue;
            };

            let mut trial = holders.clone();
            trial.entry(key).or_default().push(target.node_id.clone());
            let next = model_loads(&node_ids, &trial, &key_heat);
            if max_of(&next) > max_of(&loads) + 1e-9 {
                plan.notes.push(PlanNote {
                    key,
                    code: "LOAD_BOUND".into(),
                    message: format!("adding a replica on {} would raise the max node load", target.node_id),
                });
                continue;
            }
            holders = trial;
            loads = next;
            *added.entry(target.node_id.clone()).or_default() += 1;
            plan.actions.push(RebalanceAction {
                key,
                source_node: source.node_id.clone(),
                target_node: target.node_id.clone(),
            });
        }
        plan.max_load_after = max_of(&loads);
        plan
    }

    /// Executes the plan's placements. Each action re-checks its nodes; an
    /// action that no longer fits becomes a note and changes nothing.
    pub fn apply_rebalance(&self, catalog: &CatalogStore, plan: &RebalancePlan) -> Result<ApplyReport> {
        let mut report = ApplyReport {
            notes: plan.notes.clone(),
            ..ApplyReport::default()
        };
        if plan.actions.is_empty() {
            report.topology_version = self.topology().version;
            return Ok(report);
        }
        let mut sums = HashMap::new();
        for a in &plan.actions {
            match catalog.checksum(&a.key) {
                Ok(s) => {
                    sums.insert(a.key, s);
                }
                Err(_) => report.notes.push(note(
                    a.key,
                    &Error::SourceMissing(a.key, a.source_node.clone()),
                )),
            }
        }
        let version = self.mutate(|t| {
            for a in &plan.actions {
                let Some(&checksum) = sums.get(&a.key) else {
                    continue;
                };
                let source_ok = t
                    .nodes
                    .get(&a.source_node)
                    .is_some_and(|n| n.alive && n.hosts(&a.key));
                if !source_ok {
                    report
                        .notes
                        .push(note(a.key, &Error::SourceMissing(a.key, a.source_node.clone())));
                    continue;
                }
                match t.nodes.get_mut(&a.target_node) {
                    Some(n) if n.alive && !n.hosts(&a.key) && n.spare() > 0 => {
                        n.hosted.insert(a.key, Replica { checksum });
                        report.applied.push(a.clone());
                    }
                    _ => report.notes.push(note(a.key, &Error::NoCapacity(a.key))),
                }
            }
            Ok(t.version + 1)
        })?;
        report.topology_version = version;
        Ok(report)
    }

    /// Copies each key from an alive holder in `from` to the fewest-hosted
    /// alive node of `to` that lacks it. All-or-nothing.
    pub fn replicate_to_tier(
        &self,
        catalog: &CatalogStore,
        keys: &[PartitionKey],
        from: Tier,
        to: Tier,
    ) -> Result<Vec<(PartitionKey, String)>> {
        let mut sums = Vec::with_capacity(keys.len());
        for k in keys {
            sums.push((*k, catalog.checksum(k).map_err(|_| Error::SourceMissing(*k, from.to_string()))?));
        }
        self.mutate(|t| {
            let mut placed = Vec::new();
            for (key, checksum) in &sums {
                if !t.alive_holders(key).any(|n| n.tier == from) {
                    return Err(Error::SourceMissing(*key, from.to_string()));
                }
                let target = t
                    .nodes
                    .values()
                    .filter(|n| n.tier == to && n.alive && !n.hosts(key) && n.spare() > 0)
                    .min_by(|a, b| a.hosted.len().cmp(&b.hosted.len()).then(a.node_id.cmp(&b.node_id)))
                    .map(|n| n.node_id.clone());
                match target {
                    Some(id) => {
                        t.nodes
                            .get_mut(&id)
                            .expect("chosen node exists")
                            .hosted
                            .insert(*key, Replica { checksum: *checksum });
                        placed.push((*key, id));
                    }
                    // Already present on every candidate is fine; no room is not.
                    None if t.holders(key).any(|n| n.tier == to) => {}
                    None => return Err(Error::NoCapacity(*key)),
                }
            }
            Ok(placed)
        })
    }

    /// Least-loaded alive replica of `key`, ties to the lower node id.
    /// Replicas in `farm` are preferred when any exist. `checksum` restricts
    /// the choice to replicas holding exactly that content.
    pub fn route(
        &self,
        topo: &Topology,
        key: &PartitionKey,
        farm: Option<&str>,
        checksum: Option<Checksum>,
    ) -> Result<String> {
        let candidates: Vec<&NodeDescriptor> = topo
            .alive_holders(key)
            .filter(|n| checksum.is_none_or(|c| n.hosted[key].checksum == c))
            .collect();
        let in_farm: Vec<&NodeDescriptor> = match farm {
            Some(f) => candidates.iter().copied().filter(|n| n.farm == f).collect(),
            None => Vec::new(),
        };
        let pool = if in_farm.is_empty() { candidates } else { in_farm };
        pool.into_iter()
            .map(|n| (self.node_load(&n.node_id), &n.node_id))
            .min()
            .map(|(_, id)| id.clone())
            .ok_or(Error::UnavailablePartition(*key))
    }

    pub fn state(&self) -> BalancerState {
        BalancerState {
            config: self.config,
            topology: (*self.topology()).clone(),
            clock: self.now(),
            current: self.current_heat(),
            archived: self.archived_windows(),
        }
    }

    pub fn from_state(state: BalancerState) -> Result<Self> {
        let b = Balancer::new(state.config)?;
        *b.topology.write() = Arc::new(state.topology);
        *b.clock.lock() = state.clock;
        *b.archived.lock() = state.archived;
        // Per-node splits are not kept across restarts; attribute each
        // partition's count to its first holder.
        let topo = b.topology();
        let mut heat = b.heat.write();
        heat.index = state.current.window;
        for (k, v) in state.current.partitions {
            if let Some(n) = topo.holders(&k).next() {
                heat.counters
                    .insert((k, n.node_id.clone()), Arc::new(AtomicU64::new(v)));
            }
        }
        drop(heat);
        Ok(b)
    }
}
