//! Conservative cone covers over the trixel hierarchy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::geom::{self, angle, arc_distance, neg, Vec3};
use super::trixel::{Triangle, TrixelId};
use crate::error::{Error, Result};

/// Slack (radians) added to the intersection test so rounding never drops a cell.
const COVER_SLACK: f64 = 1e-9;

/// Cone on the sky; all angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeQuery {
    #[serde(alias = "ra")]
    pub center_ra: f64,
    #[serde(alias = "dec")]
    pub center_dec: f64,
    pub radius: f64,
}

impl ConeQuery {
    pub fn new(center_ra: f64, center_dec: f64, radius: f64) -> Result<Self> {
        let q = ConeQuery {
            center_ra,
            center_dec,
            radius,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !crate::types::coordinates_valid(self.center_ra, self.center_dec) {
            return Err(Error::InvalidCoordinates {
                ra: self.center_ra,
                dec: self.center_dec,
            });
        }
        if !(self.radius > 0.0 && self.radius <= 180.0) {
            return Err(Error::InvalidQuery(format!(
                "cone radius {} outside (0, 180]",
                self.radius
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        geom::radec_to_vec(self.center_ra, self.center_dec)
    }

    /// Inclusive membership test.
    pub fn contains(&self, ra: f64, dec: f64) -> bool {
        angle(self.center(), geom::radec_to_vec(ra, dec)) <= self.radius.to_radians()
    }

    /// Cap area in steradians.
    pub fn area(&self) -> f64 {
        2.0 * std::f64::consts::PI * (1.0 - self.radius.to_radians().cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Overlap {
    Disjoint,
    Partial,
    Inside,
}

/// Minimum angular distance from `p` to the closed spherical triangle.
fn min_distance(tri: &Triangle, p: Vec3) -> f64 {
    if tri.contains(p) {
        return 0.0;
    }
    let [a, b, c] = tri.v;
    arc_distance(p, a, b)
        .min(arc_distance(p, b, c))
        .min(arc_distance(p, c, a))
}

fn classify(tri: &Triangle, center: Vec3, radius: f64) -> Overlap {
    if min_distance(tri, center) > radius + COVER_SLACK {
        return Overlap::Disjoint;
    }
    let inside = if radius <= std::f64::consts::FRAC_PI_2 {
        // Caps no larger than a hemisphere are convex: corners decide.
        tri.v.iter().all(|&v| angle(center, v) < radius - COVER_SLACK)
    } else {
        // Larger caps: inside iff the triangle stays clear of the complementary cap.
        let complement = std::f64::consts::PI - radius;
        min_distance(tri, neg(center)) > complement + COVER_SLACK
    };
    if inside {
        Overlap::Inside
    } else {
        Overlap::Partial
    }
}

/// Trixels at `level` or coarser whose union contains the cone. Cells that
/// lie entirely inside the cone are returned unrefined; no returned cell is
/// disjoint from it.
pub fn cone_cover(q: &ConeQuery, level: u8) -> BTreeSet<TrixelId> {
    let mut out = BTreeSet::new();
    if q.radius >= 180.0 {
        out.extend(TrixelId::roots());
        return out;
    }
    let center = q.center();
    let radius = q.radius.to_radians();
    let mut stack: Vec<(TrixelId, Triangle)> =
        TrixelId::roots().map(|id| (id, id.triangle())).collect();
    while let Some((id, tri)) = stack.pop() {
        match classify(&tri, center, radius) {
            Overlap::Disjoint => {}
            Overlap::Inside => {
                out.insert(id);
            }
            Overlap::Partial if id.level() >= level => {
                out.insert(id);
            }
            Overlap::Partial => {
                let kids = tri.children();
                for (i, t) in kids.into_iter().enumerate() {
                    stack.push((id.child(i as u8), t));
                }
            }
        }
    }
    out
}

/// Expands a mixed-level cover to exactly `level`.
pub fn expand_to_level(cover: &BTreeSet<TrixelId>, level: u8) -> BTreeSet<TrixelId> {
    cover
        .iter()
        .flat_map(|id| match id.level().cmp(&level) {
            std::cmp::Ordering::Greater => vec![id.ancestor(level).expect("shallower level")],
            _ => id.descendants_at(level),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::trixel::trixel_of;

    #[test]
    fn whole_sphere_is_all_roots() {
        let q = ConeQuery::new(12.0, -30.0, 180.0).unwrap();
        let cover = cone_cover(&q, 5);
        assert_eq!(cover, TrixelId::roots().collect());
    }

    #[test]
    fn tiny_cone_gives_containing_trixel() {
        let (ra, dec) = (37.2, 21.9);
        let q = ConeQuery::new(ra, dec, 1e-7).unwrap();
        for level in [0u8, 3, 7, 10] {
            let cover = cone_cover(&q, level);
            let expected = trixel_of(ra, dec, level).unwrap();
            assert_eq!(cover.into_iter().collect::<Vec<_>>(), vec![expected]);
        }
    }

    #[test]
    fn invalid_radius_rejected() {
        assert!(ConeQuery::new(0.0, 0.0, 0.0).is_err());
        assert!(ConeQuery::new(0.0, 0.0, 180.5).is_err());
        assert!(ConeQuery::new(0.0, 0.0, f64::NAN).is_err());
        assert!(ConeQuery::new(360.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn hemisphere_cone_keeps_whole_roots() {
        // A cap of 100 degrees around the north pole fully contains all northern roots.
        let q = ConeQuery::new(0.0, 90.0, 100.0).unwrap();
        let cover = cone_cover(&q, 4);
        for r in 0..4 {
            assert!(cover.contains(&TrixelId::root(r)));
        }
        assert!(cover.iter().all(|t| t.level() <= 4));
    }

    #[test]
    fn expand_normalizes_levels() {
        let mut cover = BTreeSet::new();
        cover.insert(TrixelId::root(2));
        cover.insert("S0123".parse().unwrap());
        let out = expand_to_level(&cover, 2);
        assert_eq!(out.len(), 17);
        assert!(out.iter().all(|t| t.level() == 2));
    }
}
