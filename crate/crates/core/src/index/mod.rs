//! Spatio-temporal indexing: trixel ids, cone covers, time buckets and the
//! mapping from a query to the set of partitions that can hold its rows.

pub mod chunk;
pub mod cover;
pub mod geom;
pub mod trixel;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use chunk::IndexChunk;
pub use cover::{cone_cover, expand_to_level, ConeQuery};
pub use trixel::{trixel_of, Triangle, TrixelId, MAX_SUPPORTED_LEVEL};

use crate::error::{Error, Result};

/// Which dimension rows are physically ordered by inside a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClusterDimension {
    #[default]
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub partition_level: u8,
    pub max_level: u8,
    /// Seconds per time bucket.
    pub bucket_width: f64,
    pub clustering: ClusterDimension,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            partition_level: 3,
            max_level: 10,
            bucket_width: 86_400.0,
            clustering: ClusterDimension::Spatial,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_level > MAX_SUPPORTED_LEVEL {
            return Err(Error::Config(format!(
                "max_level {} exceeds {MAX_SUPPORTED_LEVEL}",
                self.max_level
            )));
        }
        if self.partition_level > self.max_level {
            return Err(Error::Config(format!(
                "partition_level {} exceeds max_level {}",
                self.partition_level, self.max_level
            )));
        }
        if !(self.bucket_width.is_finite() && self.bucket_width > 0.0) {
            return Err(Error::Config("bucket_width must be positive".into()));
        }
        Ok(())
    }

    /// Trixel at `level`, refusing levels deeper than the configured maximum.
    pub fn trixel(&self, ra: f64, dec: f64, level: u8) -> Result<TrixelId> {
        if level > self.max_level {
            return Err(Error::Config(format!(
                "level {level} exceeds max_level {}",
                self.max_level
            )));
        }
        trixel_of(ra, dec, level)
    }

    pub fn bucket(&self, epoch: f64) -> u64 {
        time_bucket(epoch, self.bucket_width)
    }

    pub fn partition_key(&self, ra: f64, dec: f64, epoch: f64) -> Result<PartitionKey> {
        Ok(PartitionKey {
            trixel: self.trixel(ra, dec, self.partition_level)?,
            time_bucket: self.bucket(epoch),
        })
    }

    pub fn partitions_for(
        &self,
        cone: Option<&ConeQuery>,
        epochs: Option<EpochRange>,
    ) -> PartitionCover {
        partitions_for(cone, epochs, self.partition_level, self.bucket_width)
    }
}

/// `floor(epoch / width)`; negative epochs clamp to bucket 0.
pub fn time_bucket(epoch: f64, width: f64) -> u64 {
    debug_assert!(width > 0.0);
    let b = (epoch / width).floor();
    if b <= 0.0 {
        0
    } else {
        b as u64
    }
}

/// Address of one catalog partition.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionKey {
    pub trixel: TrixelId,
    pub time_bucket: u64,
}

impl PartitionKey {
    pub fn new(trixel: TrixelId, time_bucket: u64) -> Self {
        PartitionKey {
            trixel,
            time_bucket,
        }
    }
}

impl fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.trixel, self.time_bucket)
    }
}

impl fmt::Debug for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for PartitionKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (t, b) = s
            .split_once('@')
            .ok_or_else(|| Error::Parse(format!("partition key {s:?} is not <trixel>@<bucket>")))?;
        let time_bucket = b
            .parse()
            .map_err(|_| Error::Parse(format!("bad time bucket in {s:?}")))?;
        Ok(PartitionKey {
            trixel: t.parse()?,
            time_bucket,
        })
    }
}

impl Serialize for PartitionKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartitionKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive epoch interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRange {
    pub start: f64,
    pub end: f64,
}

impl EpochRange {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start <= end) {
            return Err(Error::InvalidQuery(format!(
                "epoch range [{start}, {end}] is empty or not finite"
            )));
        }
        Ok(EpochRange { start, end })
    }

    pub fn contains(&self, epoch: f64) -> bool {
        epoch >= self.start && epoch <= self.end
    }
}

/// Cartesian product of spatial cells and time buckets, kept lazy so that an
/// unbounded time range stays cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionCover {
    /// `None` means the whole sky.
    pub trixels: Option<BTreeSet<TrixelId>>,
    /// Inclusive bucket bounds; `None` means all time.
    pub buckets: Option<(u64, u64)>,
}

impl PartitionCover {
    pub fn contains(&self, key: &PartitionKey) -> bool {
        let spatial = self
            .trixels
            .as_ref()
            .is_none_or(|set| set.contains(&key.trixel));
        let temporal = self
            .buckets
            .is_none_or(|(lo, hi)| (lo..=hi).contains(&key.time_bucket));
        spatial && temporal
    }

    /// Keys of the product, when both factors are bounded.
    pub fn keys(&self) -> Option<Vec<PartitionKey>> {
        let trixels = self.trixels.as_ref()?;
        let (lo, hi) = self.buckets?;
        Some(
            trixels
                .iter()
                .flat_map(|&t| (lo..=hi).map(move |b| PartitionKey::new(t, b)))
                .collect(),
        )
    }

    /// Restricts the cover to keys that actually exist.
    pub fn select<'a, I>(&self, existing: I) -> BTreeSet<PartitionKey>
    where
        I: IntoIterator<Item = &'a PartitionKey>,
    {
        existing
            .into_iter()
            .filter(|k| self.contains(k))
            .copied()
            .collect()
    }
}

/// Partitions that can hold rows inside `cone` and `epochs`.
pub fn partitions_for(
    cone: Option<&ConeQuery>,
    epochs: Option<EpochRange>,
    partition_level: u8,
    bucket_width: f64,
) -> PartitionCover {
    let trixels = cone.and_then(|q| {
        if q.radius >= 180.0 {
            None
        } else {
            Some(expand_to_level(&cone_cover(q, partition_level), partition_level))
        }
    });
    let buckets = epochs.map(|r| {
        (
            time_bucket(r.start, bucket_width),
            time_bucket(r.end, bucket_width),
        )
    });
    PartitionCover { trixels, buckets }
}
