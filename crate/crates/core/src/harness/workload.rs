//! Synthetic sky and detection stream.
//!
//! The sky is a fixed set of pointing fields. Each (field, CCD) footprint
//! holds a few persistent objects whose positions and base fluxes derive from
//! the seed alone, so every revisit of a field sees the same objects with a
//! little positional jitter. Transients are drawn fresh per visit.
//!
//! Every random draw comes from a ChaCha stream keyed by what it describes,
//! never from a shared sequence, so the stream for visit `v` does not depend
//! on how many visits were generated before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::SimConfig;
use crate::ingest::ServerId;
use crate::types::{CcdId, Filter, SourceRecord, VisitId};

const ARCSEC: f64 = 1.0 / 3600.0;

/// One server's copy of one CCD image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub ccd_id: CcdId,
    pub server_id: ServerId,
    pub arrival: f64,
}

#[derive(Debug, Clone)]
pub struct VisitPlan {
    pub visit_id: VisitId,
    pub index: u64,
    /// Shutter time; also the epoch of every detection in the visit.
    pub start: f64,
    pub field: usize,
    pub filter: Filter,
    /// Detections per CCD, indexed by CCD id.
    pub records: Vec<Vec<SourceRecord>>,
    /// Both copies of every image, in arrival order.
    pub deliveries: Vec<Delivery>,
}

#[derive(Debug, Clone, Copy)]
struct Persistent {
    ra: f64,
    dec: f64,
    flux: f64,
}

#[derive(Debug, Clone)]
pub struct Workload {
    cfg: SimConfig,
    ccd_count: u16,
    day_length: f64,
    cols: u16,
    rows: u16,
    fields: Vec<(f64, f64)>,
}

fn stream(seed: u64, salt: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(id);
    rng
}

const SALT_FIELDS: u64 = 1;
const SALT_OBJECTS: u64 = 2;
const SALT_VISIT: u64 = 3;

impl Workload {
    pub fn new(cfg: &SimConfig, ccd_count: u16, day_length: f64) -> Self {
        let cols = ((2.0 * ccd_count as f64).sqrt().ceil() as u16).max(1);
        let rows = ccd_count.div_ceil(cols);
        let mut rng = stream(cfg.seed, SALT_FIELDS, 0);
        let fields = (0..cfg.fields)
            .map(|_| {
                let ra = rng.gen_range(0.0..360.0);
                let dec = rng.gen_range(-60.0..60.0);
                (ra, dec)
            })
            .collect();
        Workload {
            cfg: cfg.clone(),
            ccd_count,
            day_length,
            cols,
            rows,
            fields,
        }
    }

    pub fn visits_per_night(&self) -> u64 {
        self.cfg.visits_per_night()
    }

    pub fn visit_id(night: u64, index: u64) -> VisitId {
        night * 100_000 + index
    }

    pub fn visit_start(&self, night: u64, index: u64) -> f64 {
        night as f64 * self.day_length + index as f64 * self.cfg.cadence
    }

    /// Center of `ccd` within the pointing at (`ra`, `dec`).
    fn ccd_center(&self, field: (f64, f64), ccd: CcdId) -> (f64, f64) {
        let size = self.cfg.ccd_size_deg;
        let col = (ccd % self.cols) as f64 - (self.cols as f64 - 1.0) / 2.0;
        let row = (ccd / self.cols) as f64 - (self.rows as f64 - 1.0) / 2.0;
        let dec = field.1 + row * size;
        let ra = (field.0 + col * size / dec.to_radians().cos()).rem_euclid(360.0);
        (ra, dec)
    }

    fn point_in_ccd(&self, rng: &mut ChaCha8Rng, center: (f64, f64)) -> (f64, f64) {
        let half = self.cfg.ccd_size_deg / 2.0;
        let dec = center.1 + rng.gen_range(-half..half);
        let ra = center.0 + rng.gen_range(-half..half) / dec.to_radians().cos();
        (ra.rem_euclid(360.0), dec)
    }

    fn persistent(&self, field: usize, ccd: CcdId) -> Vec<Persistent> {
        let id = field as u64 * self.ccd_count as u64 + ccd as u64;
        let mut rng = stream(self.cfg.seed, SALT_OBJECTS, id);
        let center = self.ccd_center(self.fields[field], ccd);
        (0..self.cfg.sources_per_ccd)
            .map(|_| {
                let (ra, dec) = self.point_in_ccd(&mut rng, center);
                Persistent {
                    ra,
                    dec,
                    flux: rng.gen_range(100.0..10_000.0),
                }
            })
            .collect()
    }

    /// Generates visit `index` of `night`: its detections and deliveries.
    pub fn visit(&self, night: u64, index: u64) -> VisitPlan {
        let visit_id = Self::visit_id(night, index);
        let start = self.visit_start(night, index);
        let mut rng = stream(self.cfg.seed, SALT_VISIT, visit_id);
        let field = rng.gen_range(0..self.fields.len());
        let filter = Filter::ALL[rng.gen_range(0..Filter::ALL.len())];
        let jitter = Normal::new(0.0, self.cfg.position_jitter_arcsec * ARCSEC)
            .expect("jitter validated non-negative");
        let scatter = Normal::new(0.0, 0.02).expect("constant");
        let transients = (self.cfg.transient_rate > 0.0)
            .then(|| Poisson::new(self.cfg.transient_rate).expect("rate validated positive"));

        let mut records = Vec::with_capacity(self.ccd_count as usize);
        for ccd in 0..self.ccd_count {
            let base = visit_id * 1_000_000_000 + ccd as u64 * 1_000_000;
            let mut out = Vec::new();
            let push = |ra: f64, dec: f64, flux: f64, out: &mut Vec<SourceRecord>| {
                out.push(SourceRecord {
                    source_id: base + out.len() as u64,
                    visit_id,
                    ccd_id: ccd,
                    ra: ra.rem_euclid(360.0),
                    dec: dec.clamp(-90.0, 90.0),
                    epoch: start,
                    flux,
                    filter,
                });
            };
            for obj in self.persistent(field, ccd) {
                let dec = obj.dec + jitter.sample(&mut rng);
                let ra = obj.ra + jitter.sample(&mut rng) / dec.to_radians().cos();
                let mut flux = obj.flux * (1.0 + scatter.sample(&mut rng));
                if rng.gen_bool(self.cfg.flare_probability) {
                    flux *= 20.0;
                }
                push(ra, dec, flux.max(1.0), &mut out);
            }
            let n = transients.map_or(0, |p| p.sample(&mut rng) as u64);
            let center = self.ccd_center(self.fields[field], ccd);
            for _ in 0..n {
                let (ra, dec) = self.point_in_ccd(&mut rng, center);
                push(ra, dec, rng.gen_range(50.0..5_000.0), &mut out);
            }
            records.push(out);
        }

        let mut deliveries = Vec::with_capacity(2 * self.ccd_count as usize);
        for ccd in 0..self.ccd_count {
            for server_id in [ServerId::A, ServerId::B] {
                let delay = if self.cfg.server_delay_max > self.cfg.server_delay_min {
                    rng.gen_range(self.cfg.server_delay_min..self.cfg.server_delay_max)
                } else {
                    self.cfg.server_delay_min
                };
                deliveries.push(Delivery {
                    ccd_id: ccd,
                    server_id,
                    arrival: start + delay,
                });
            }
        }
        deliveries.sort_by(|a, b| {
            a.arrival
                .total_cmp(&b.arrival)
                .then(a.ccd_id.cmp(&b.ccd_id))
                .then(a.server_id.cmp(&b.server_id))
        });

        VisitPlan {
            visit_id,
            index,
            start,
            field,
            filter,
            records,
            deliveries,
        }
    }
}
