//! Catalog row types shared by every subsystem.
//!
//! Both row types have a canonical binary encoding: fields in declaration
//! order, numbers little-endian. Content checksums are computed over it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub type SourceId = u64;
pub type VisitId = u64;
pub type CcdId = u16;
pub type ObjectId = u64;

/// Photometric filter of an exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    U,
    G,
    R,
    I,
    Z,
    Y,
}

impl Filter {
    pub const ALL: [Filter; 6] = [Filter::U, Filter::G, Filter::R, Filter::I, Filter::Z, Filter::Y];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Filter::U => "u",
            Filter::G => "g",
            Filter::R => "r",
            Filter::I => "i",
            Filter::Z => "z",
            Filter::Y => "y",
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Filter::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown filter {s:?}")))
    }
}

/// One detection on one CCD of one visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: SourceId,
    pub visit_id: VisitId,
    pub ccd_id: CcdId,
    /// Degrees, `[0, 360)`.
    pub ra: f64,
    /// Degrees, `[-90, 90]`.
    pub dec: f64,
    /// Seconds since survey start.
    pub epoch: f64,
    pub flux: f64,
    pub filter: Filter,
}

impl SourceRecord {
    pub const ENCODED_LEN: usize = 8 + 8 + 2 + 8 + 8 + 8 + 8 + 1;

    pub fn coordinates_valid(&self) -> bool {
        coordinates_valid(self.ra, self.dec)
    }

    pub fn flux_valid(&self) -> bool {
        self.flux.is_finite() && self.flux >= 0.0
    }

    pub fn epoch_valid(&self) -> bool {
        self.epoch.is_finite() && self.epoch >= 0.0
    }

    pub fn is_valid(&self) -> bool {
        self.coordinates_valid() && self.flux_valid() && self.epoch_valid()
    }

    /// `(visit_id, ccd_id, source_id)`, unique within the catalog.
    pub fn identity(&self) -> (VisitId, CcdId, SourceId) {
        (self.visit_id, self.ccd_id, self.source_id)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.source_id.to_le_bytes());
        out.extend_from_slice(&self.visit_id.to_le_bytes());
        out.extend_from_slice(&self.ccd_id.to_le_bytes());
        out.extend_from_slice(&self.ra.to_le_bytes());
        out.extend_from_slice(&self.dec.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.flux.to_le_bytes());
        out.push(self.filter.code());
    }
}

pub fn coordinates_valid(ra: f64, dec: f64) -> bool {
    ra.is_finite() && dec.is_finite() && (0.0..360.0).contains(&ra) && (-90.0..=90.0).contains(&dec)
}

/// A persistent sky object built up by association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AstroObject {
    pub object_id: ObjectId,
    pub ra: f64,
    pub dec: f64,
    pub first_epoch: f64,
    pub last_epoch: f64,
    pub n_sources: u64,
    pub current_version: u32,
    /// Running flux mean over all associated sources.
    pub flux_mean: f64,
    /// Running sum of squared flux deviations (Welford).
    pub flux_m2: f64,
}

impl AstroObject {
    pub const ENCODED_LEN: usize = 8 * 8 + 4;

    pub fn from_source(object_id: ObjectId, src: &SourceRecord) -> Self {
        AstroObject {
            object_id,
            ra: src.ra,
            dec: src.dec,
            first_epoch: src.epoch,
            last_epoch: src.epoch,
            n_sources: 1,
            current_version: 1,
            flux_mean: src.flux,
            flux_m2: 0.0,
        }
    }

    /// Sample standard deviation of the associated fluxes.
    pub fn flux_std(&self) -> f64 {
        if self.n_sources < 2 {
            0.0
        } else {
            (self.flux_m2 / (self.n_sources - 1) as f64).sqrt()
        }
    }

    /// Folds one more source into the running statistics.
    pub fn absorb(&mut self, src: &SourceRecord) {
        let n = self.n_sources as f64;
        let mean_dir = crate::index::geom::radec_to_vec(self.ra, self.dec);
        let new_dir = crate::index::geom::radec_to_vec(src.ra, src.dec);
        let blended = [
            mean_dir[0] * n + new_dir[0],
            mean_dir[1] * n + new_dir[1],
            mean_dir[2] * n + new_dir[2],
        ];
        let (ra, dec) = crate::index::geom::vec_to_radec(crate::index::geom::normalize(blended));
        self.ra = ra;
        self.dec = dec;

        self.n_sources += 1;
        let delta = src.flux - self.flux_mean;
        self.flux_mean += delta / self.n_sources as f64;
        self.flux_m2 += delta * (src.flux - self.flux_mean);
        self.first_epoch = self.first_epoch.min(src.epoch);
        self.last_epoch = self.last_epoch.max(src.epoch);
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.object_id.to_le_bytes());
        out.extend_from_slice(&self.ra.to_le_bytes());
        out.extend_from_slice(&self.dec.to_le_bytes());
        out.extend_from_slice(&self.first_epoch.to_le_bytes());
        out.extend_from_slice(&self.last_epoch.to_le_bytes());
        out.extend_from_slice(&self.n_sources.to_le_bytes());
        out.extend_from_slice(&self.current_version.to_le_bytes());
        out.extend_from_slice(&self.flux_mean.to_le_bytes());
        out.extend_from_slice(&self.flux_m2.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(flux: f64) -> SourceRecord {
        SourceRecord {
            source_id: 1,
            visit_id: 1,
            ccd_id: 0,
            ra: 10.0,
            dec: 20.0,
            epoch: 5.0,
            flux,
            filter: Filter::R,
        }
    }

    #[test]
    fn encoded_length_matches_constant() {
        let mut buf = Vec::new();
        src(1.0).encode_into(&mut buf);
        assert_eq!(buf.len(), SourceRecord::ENCODED_LEN);
        let mut buf = Vec::new();
        AstroObject::from_source(1, &src(1.0)).encode_into(&mut buf);
        assert_eq!(buf.len(), AstroObject::ENCODED_LEN);
    }

    #[test]
    fn ra_360_is_out_of_range() {
        assert!(!coordinates_valid(360.0, 0.0));
        assert!(coordinates_valid(0.0, -90.0));
        assert!(!coordinates_valid(10.0, 90.5));
        assert!(!coordinates_valid(f64::NAN, 0.0));
    }

    #[test]
    fn welford_matches_two_pass() {
        let fluxes = [3.0, 5.0, 4.0, 10.0, 7.5];
        let mut obj = AstroObject::from_source(9, &src(fluxes[0]));
        for f in &fluxes[1..] {
            obj.absorb(&src(*f));
        }
        let mean = fluxes.iter().sum::<f64>() / fluxes.len() as f64;
        let var = fluxes.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (fluxes.len() - 1) as f64;
        assert!((obj.flux_mean - mean).abs() < 1e-12);
        assert!((obj.flux_std() - var.sqrt()).abs() < 1e-12);
        assert_eq!(obj.n_sources, 5);
        assert!((obj.ra - 10.0).abs() < 1e-9 && (obj.dec - 20.0).abs() < 1e-9);
    }

    #[test]
    fn filter_round_trips_through_json() {
        let json = serde_json::to_string(&Filter::Z).unwrap();
        assert_eq!(json, "\"z\"");
        assert_eq!("y".parse::<Filter>().unwrap(), Filter::Y);
        assert!("q".parse::<Filter>().is_err());
    }
}
