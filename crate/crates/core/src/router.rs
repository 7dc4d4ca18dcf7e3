//! Query planning and scatter-gather execution.
//!
//! Planning prunes partitions with the spatio-temporal cover, binds the query
//! to a data pool and picks one alive replica per partition. Execution scans
//! the chosen partitions concurrently and concatenates the results in
//! partition-key order, each partition contributing rows in clustering order.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::balancer::Balancer;
use crate::catalog::{CatalogStore, Checksum, RowFilter};
use crate::error::{Error, Result};
use crate::index::{ConeQuery, EpochRange, PartitionKey};
use crate::ingest::Associator;
use crate::types::{AstroObject, ObjectId, SourceRecord};
use crate::versioning::{ReleaseId, ReleaseRegistry, VersionSelector, VersionStore};

/// Which data a query reads: fresh data or an immutable release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pool {
    #[default]
    Latest,
    Released(ReleaseId),
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pool::Latest => f.write_str("latest"),
            Pool::Released(r) => write!(f, "released:{r}"),
        }
    }
}

impl FromStr for Pool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latest" => Ok(Pool::Latest),
            _ => match s.strip_prefix("released:") {
                Some(r) => r.parse().map(Pool::Released),
                None => Err(Error::Parse(format!(
                    "pool must be latest or released:<id>, got {s:?}"
                ))),
            },
        }
    }
}

impl Serialize for Pool {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pool {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Query {
    #[serde(default)]
    pub cone: Option<ConeQuery>,
    #[serde(default)]
    pub epoch_range: Option<EpochRange>,
    #[serde(default)]
    pub object_id: Option<ObjectId>,
    #[serde(default)]
    pub pool: Pool,
    #[serde(default)]
    pub farm_hint: Option<String>,
}

impl Query {
    pub fn validate(&self) -> Result<()> {
        if self.cone.is_none() && self.epoch_range.is_none() && self.object_id.is_none() {
            return Err(Error::InvalidQuery(
                "a query needs a cone, an epoch range or an object id".into(),
            ));
        }
        if let Some(c) = &self.cone {
            c.validate()?;
        }
        if let Some(e) = &self.epoch_range {
            EpochRange::new(e.start, e.end)?;
        }
        Ok(())
    }

    fn row_filter(&self) -> RowFilter {
        RowFilter {
            cone: self.cone,
            epochs: self.epoch_range,
        }
    }

    fn selects_rows(&self) -> bool {
        self.cone.is_some() || self.epoch_range.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTarget {
    pub key: PartitionKey,
    /// Serving node; `None` when there is no replica topology and the
    /// catalog is read directly.
    pub node: Option<String>,
    pub estimated_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub query: Query,
    pub pool: Pool,
    /// Ascending by partition key.
    pub targets: Vec<PlanTarget>,
    pub estimated_rows: usize,
    pub topology_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTiming {
    pub key: PartitionKey,
    pub node: Option<String>,
    pub rows: usize,
    #[serde(with = "crate::ingest::duration_secs")]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub rows: Vec<SourceRecord>,
    pub objects: Vec<AstroObject>,
    pub timings: Vec<PartitionTiming>,
    pub replanned: bool,
}

/// Borrowed view over the stores a query may touch.
pub struct Router<'a> {
    pub catalog: &'a CatalogStore,
    pub releases: &'a ReleaseRegistry,
    pub versions: &'a VersionStore,
    pub balancer: &'a Balancer,
    /// Working object table for latest-pool lookups.
    pub objects: Option<&'a Associator>,
    pub parallelism: usize,
}

impl<'a> Router<'a> {
    pub fn plan(&self, query: &Query) -> Result<QueryPlan> {
        query.validate()?;
        let (candidates, release_sums) = match query.pool {
            Pool::Latest => (self.catalog.keys(), None),
            Pool::Released(r) => {
                let rel = self.releases.get(r)?;
                (rel.checksums.keys().copied().collect(), Some(rel.checksums))
            }
        };
        let keys = if query.selects_rows() {
            self.catalog
                .index()
                .partitions_for(query.cone.as_ref(), query.epoch_range)
                .select(candidates.iter())
        } else {
            Default::default()
        };
        let topo = self.balancer.topology();
        let mut targets = Vec::with_capacity(keys.len());
        for key in keys {
            let node = if topo.is_empty() {
                None
            } else {
                let sum: Option<Checksum> = release_sums.as_ref().map(|s| s[&key]);
                Some(
                    self.balancer
                        .route(&topo, &key, query.farm_hint.as_deref(), sum)?,
                )
            };
            let estimated_rows = self
                .catalog
                .partition(&key)
                .map(|p| p.read().row_count())
                .unwrap_or(0);
            targets.push(PlanTarget {
                key,
                node,
                estimated_rows,
            });
        }
        Ok(QueryPlan {
            query: query.clone(),
            pool: query.pool,
            estimated_rows: targets.iter().map(|t| t.estimated_rows).sum(),
            targets,
            topology_version: topo.version,
        })
    }

    fn plan_still_valid(&self, plan: &QueryPlan) -> bool {
        let topo = self.balancer.topology();
        if topo.version == plan.topology_version {
            return true;
        }
        plan.targets.iter().all(|t| match &t.node {
            None => topo.is_empty(),
            Some(n) => topo.nodes.get(n).is_some_and(|d| d.alive && d.hosts(&t.key)),
        })
    }

    /// Runs `plan`. If a chosen replica has gone away since planning, the
    /// query is planned once more before giving up.
    pub fn execute(&self, plan: &QueryPlan) -> Result<QueryResult> {
        let mut replanned = false;
        let fresh;
        let plan = if self.plan_still_valid(plan) {
            plan
        } else {
            replanned = true;
            fresh = self.plan(&plan.query)?;
            &fresh
        };
        let filter = plan.query.row_filter();
        let n = plan.targets.len();
        let slots: Vec<Mutex<Option<Result<(Vec<SourceRecord>, Duration)>>>> =
            (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.parallelism.max(1).min(n);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let started = Instant::now();
                    let res = self
                        .catalog
                        .scan(&plan.targets[i].key, |r| filter.matches(r))
                        .map(|rows| (rows, started.elapsed()));
                    *slots[i].lock() = Some(res);
                });
            }
        });

        let mut rows = Vec::new();
        let mut timings = Vec::with_capacity(n);
        for (t, slot) in plan.targets.iter().zip(slots) {
            let (part, elapsed) = slot.into_inner().expect("every slot is filled")?;
            if let Some(node) = &t.node {
                self.balancer.record_access(t.key, node)?;
            }
            timings.push(PartitionTiming {
                key: t.key,
                node: t.node.clone(),
                rows: part.len(),
                elapsed,
            });
            rows.extend(part);
        }
        let objects = match plan.query.object_id {
            Some(id) => self.lookup_object(id, plan.pool, plan.query.cone.as_ref())?,
            None => Vec::new(),
        };
        Ok(QueryResult {
            rows,
            objects,
            timings,
            replanned,
        })
    }

    pub fn query(&self, query: &Query) -> Result<QueryResult> {
        let plan = self.plan(query)?;
        self.execute(&plan)
    }

    fn lookup_object(
        &self,
        id: ObjectId,
        pool: Pool,
        cone: Option<&ConeQuery>,
    ) -> Result<Vec<AstroObject>> {
        let obj = match pool {
            Pool::Latest => match self.objects.and_then(|a| a.get(id)) {
                Some(o) => o,
                None => self.versions.read_versioned(id, VersionSelector::Latest)?.payload,
            },
            Pool::Released(r) => {
                self.versions
                    .read_versioned(id, VersionSelector::AsOfRelease(r))?
                    .payload
            }
        };
        Ok(match cone {
            Some(c) if !c.contains(obj.ra, obj.dec) => Vec::new(),
            _ => vec![obj],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancer::{BalancerConfig, NodeDescriptor, Tier};
    use crate::catalog::CatalogConfig;
    use crate::types::Filter;
    use crate::versioning::QaReport;

    struct World {
        catalog: CatalogStore,
        releases: ReleaseRegistry,
        versions: VersionStore,
        balancer: Balancer,
    }

    impl World {
        fn new() -> Self {
            World {
                catalog: CatalogStore::new(CatalogConfig::default()).unwrap(),
                releases: ReleaseRegistry::new(),
                versions: VersionStore::new(),
                balancer: Balancer::new(BalancerConfig::default()).unwrap(),
            }
        }

        fn router(&self) -> Router<'_> {
            Router {
                catalog: &self.catalog,
                releases: &self.releases,
                versions: &self.versions,
                balancer: &self.balancer,
                objects: None,
                parallelism: 4,
            }
        }

        fn add(&self, id: u64, ra: f64, dec: f64, epoch: f64) -> PartitionKey {
            let r = SourceRecord {
                source_id: id,
                visit_id: 1,
                ccd_id: 0,
                ra,
                dec,
                epoch,
                flux: 1.0,
                filter: Filter::Y,
            };
            let key = self.catalog.index().partition_key(ra, dec, epoch).unwrap();
            self.catalog.insert_routed(key, &[r]).unwrap();
            key
        }
    }

    #[test]
    fn pool_parsing() {
        assert_eq!("latest".parse::<Pool>().unwrap(), Pool::Latest);
        assert_eq!(
            "released:r2".parse::<Pool>().unwrap(),
            Pool::Released(ReleaseId(2))
        );
        assert!("stale".parse::<Pool>().is_err());
        let q: Query = serde_json::from_str(
            r#"{"cone":{"ra":10,"dec":5,"radius":1},"pool":"released:r1"}"#,
        )
        .unwrap();
        assert_eq!(q.cone.unwrap().center_ra, 10.0);
        assert_eq!(q.pool, Pool::Released(ReleaseId(1)));
    }

    #[test]
    fn empty_query_rejected() {
        let w = World::new();
        assert!(matches!(
            w.router().plan(&Query::default()),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn whole_sky_returns_everything_in_key_order() {
        let w = World::new();
        for i in 0..20 {
            w.add(i, (i * 17 % 360) as f64, (i as f64 * 7.0) - 70.0, i as f64 * 5000.0);
        }
        let q = Query {
            cone: Some(ConeQuery::new(0.0, 0.0, 180.0).unwrap()),
            ..Query::default()
        };
        let r = w.router().query(&q).unwrap();
        assert_eq!(r.rows.len(), w.catalog.total_rows());
        let keys: Vec<_> = r.timings.iter().map(|t| t.key).collect();
        assert!(keys.windows(2).all(|k| k[0] < k[1]));
        assert_eq!(w.router().query(&q).unwrap().rows, r.rows);
    }

    #[test]
    fn released_pool_ignores_later_ingest() {
        let w = World::new();
        let k = w.add(1, 10.0, 10.0, 100.0);
        let qa = QaReport::mechanical(0, 0, 0, 0, 0, 0);
        let rel = w
            .releases
            .create_release(&w.catalog, &[k], &qa, 0.0, &w.versions)
            .unwrap();
        w.add(2, 10.0, 10.0, 200_000.0);
        let q = Query {
            cone: Some(ConeQuery::new(10.0, 10.0, 1.0).unwrap()),
            pool: Pool::Released(rel.release_id),
            ..Query::default()
        };
        assert_eq!(w.router().query(&q).unwrap().rows.len(), 1);
        let latest = Query {
            pool: Pool::Latest,
            ..q.clone()
        };
        assert_eq!(w.router().query(&latest).unwrap().rows.len(), 2);
        let missing = Query {
            pool: Pool::Released(ReleaseId(9)),
            ..q
        };
        assert!(matches!(w.router().plan(&missing), Err(Error::UnknownRelease(_))));
    }

    #[test]
    fn dead_replicas_make_partition_unavailable() {
        let w = World::new();
        let k = w.add(1, 10.0, 10.0, 100.0);
        let k2 = w.add(2, 200.0, -10.0, 100.0);
        w.balancer
            .add_node(NodeDescriptor::new("n1", Tier::Dac, "f", 8))
            .unwrap();
        w.balancer
            .add_node(NodeDescriptor::new("n2", Tier::Dac, "f", 8))
            .unwrap();
        w.balancer.host(&w.catalog, "n1", k).unwrap();
        w.balancer.host(&w.catalog, "n2", k2).unwrap();
        w.balancer.fail_node("n1").unwrap();
        let q = Query {
            cone: Some(ConeQuery::new(10.0, 10.0, 1.0).unwrap()),
            ..Query::default()
        };
        assert!(matches!(
            w.router().plan(&q),
            Err(Error::UnavailablePartition(key)) if key == k
        ));
        let other = Query {
            cone: Some(ConeQuery::new(200.0, -10.0, 1.0).unwrap()),
            ..Query::default()
        };
        let r = w.router().query(&other).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(w.balancer.heat(&k2), 1);
    }

    #[test]
    fn replans_once_after_failure() {
        let w = World::new();
        let k = w.add(1, 10.0, 10.0, 100.0);
        for n in ["a", "b"] {
            w.balancer
                .add_node(NodeDescriptor::new(n, Tier::Dac, "f", 8))
                .unwrap();
            w.balancer.host(&w.catalog, n, k).unwrap();
        }
        let q = Query {
            cone: Some(ConeQuery::new(10.0, 10.0, 1.0).unwrap()),
            ..Query::default()
        };
        let plan = w.router().plan(&q).unwrap();
        let chosen = plan.targets[0].node.clone().unwrap();
        w.balancer.fail_node(&chosen).unwrap();
        let r = w.router().execute(&plan).unwrap();
        assert!(r.replanned);
        assert_ne!(r.timings[0].node.as_deref(), Some(chosen.as_str()));
    }
}
