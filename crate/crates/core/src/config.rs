//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Keys are the field names of [`SimConfig`], [`BudgetConfig`] and the
//! archive configuration. A few keys feed more than one struct so the
//! simulated night and the store always agree:
//!
//! | key | sets |
//! |---|---|
//! | `ccd_count` | ingest, budget and sim CCD counts |
//! | `night_length` | ingest window, budget and sim night |
//! | `cadence`, `visit_cadence` | budget cadence and sim cadence |
//!
//! `failure` may repeat; each value is `node@start[-end]` in seconds from
//! the start of the night.

use serde::de::DeserializeOwned;

use crate::archive::ArchiveConfig;
use crate::error::{Error, Result};
use crate::harness::SimConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub archive: ArchiveConfig,
    pub sim: SimConfig,
}

/// Every accepted key, for documentation and error messages.
pub const KEYS: &[&str] = &[
    // index and catalog
    "partition_level",
    "max_level",
    "bucket_width",
    "clustering",
    "partition_target_bytes",
    "resort_fraction",
    // ingest
    "ccd_count",
    "max_batch_records",
    "day_length",
    "night_length",
    "role",
    // association
    "match_radius_arcsec",
    "alert_sigma",
    "min_prior_sources",
    "visit_timeout",
    // balancer and archive
    "window",
    "threshold_factor",
    "retain_prerelease_versions",
    "replicas",
    "query_parallelism",
    // budgets
    "alert_latency_budget",
    "per_image_ingest_budget",
    "visit_cadence",
    "target_ingest_rate",
    "releases_per_year",
    // simulation
    "seed",
    "cadence",
    "visits_per_night",
    "sources_per_ccd",
    "transient_rate",
    "fields",
    "ccd_size_deg",
    "position_jitter_arcsec",
    "flare_probability",
    "server_delay_min",
    "server_delay_max",
    "real_time",
    "emit_alerts",
    "failure",
    "merge_at_end",
];

/// Splits text into `(key, value, line)` triples.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.to_string(), i + 1));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

/// Unit enums parse through their serde names.
fn variant<T: DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| Error::Config(format!("{key}: unknown value {v:?}")))
}

impl Settings {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (k, v, line) in parse_kv(text)? {
            s.apply(&k, &v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {line}: {m}")),
                other => Error::Config(format!("line {line}: {other}")),
            })?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.archive.validate()?;
        self.sim.validate()
    }

    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let a = &mut self.archive;
        let s = &mut self.sim;
        match key {
            "partition_level" => a.catalog.index.partition_level = num(key, v)?,
            "max_level" => a.catalog.index.max_level = num(key, v)?,
            "bucket_width" => a.catalog.index.bucket_width = num(key, v)?,
            "clustering" => a.catalog.index.clustering = variant(key, v)?,
            "partition_target_bytes" => a.catalog.partition_target_bytes = num(key, v)?,
            "resort_fraction" => a.catalog.resort_fraction = num(key, v)?,
            "ccd_count" => {
                let n = num(key, v)?;
                a.ingest.ccd_count = n;
                a.budget.ccd_count = n;
                s.ccd_count = n;
            }
            "max_batch_records" => a.ingest.max_batch_records = num(key, v)?,
            "day_length" => a.ingest.day_length = num(key, v)?,
            "night_length" => {
                let n = num(key, v)?;
                a.ingest.night_length = n;
                a.budget.night_length = n;
                s.night_length = n;
            }
            "role" => a.ingest.role = variant(key, v)?,
            "match_radius_arcsec" => a.association.match_radius_arcsec = num(key, v)?,
            "alert_sigma" => a.association.alert_sigma = num(key, v)?,
            "min_prior_sources" => a.association.min_prior_sources = num(key, v)?,
            "visit_timeout" => a.association.visit_timeout = num(key, v)?,
            "window" => a.balancer.window = num(key, v)?,
            "threshold_factor" => a.balancer.threshold_factor = num(key, v)?,
            "retain_prerelease_versions" => a.retain_prerelease_versions = boolean(key, v)?,
            "replicas" => a.replicas = num(key, v)?,
            "query_parallelism" => a.query_parallelism = num(key, v)?,
            "alert_latency_budget" => a.budget.alert_latency_budget = num(key, v)?,
            "per_image_ingest_budget" => a.budget.per_image_ingest_budget = num(key, v)?,
            "visit_cadence" | "cadence" => {
                let n = num(key, v)?;
                a.budget.visit_cadence = n;
                s.cadence = n;
            }
            "target_ingest_rate" => a.budget.target_ingest_rate = num(key, v)?,
            "releases_per_year" => a.budget.releases_per_year = num(key, v)?,
            "seed" => s.seed = num(key, v)?,
            "visits_per_night" => s.visits_per_night = Some(num(key, v)?),
            "sources_per_ccd" => s.sources_per_ccd = num(key, v)?,
            "transient_rate" => s.transient_rate = num(key, v)?,
            "fields" => s.fields = num(key, v)?,
            "ccd_size_deg" => s.ccd_size_deg = num(key, v)?,
            "position_jitter_arcsec" => s.position_jitter_arcsec = num(key, v)?,
            "flare_probability" => s.flare_probability = num(key, v)?,
            "server_delay_min" => s.server_delay_min = num(key, v)?,
            "server_delay_max" => s.server_delay_max = num(key, v)?,
            "real_time" => s.real_time = boolean(key, v)?,
            "emit_alerts" => s.emit_alerts = boolean(key, v)?,
            "failure" => s.failures.push(v.parse()?),
            "merge_at_end" => s.merge_at_end = boolean(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}
