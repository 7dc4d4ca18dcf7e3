//! Desk-scale survey catalog archive.
//!
//! A partitioned, spatially clustered catalog store fed by a per-CCD staging
//! ingest with dual-server redundancy and a nightly merge; immutable
//! releases with object versioning, provenance-driven virtual products and a
//! logical file map; and a simulated multi-tier replica topology with
//! hot-spot rebalancing and a pool-aware query router.

pub mod archive;
pub mod balancer;
pub mod catalog;
pub mod config;
pub mod error;
pub mod harness;
pub mod index;
pub mod ingest;
pub mod merge;
pub mod router;
pub mod types;
pub mod versioning;

pub use error::{Error, Result};
