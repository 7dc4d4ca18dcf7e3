//! Hierarchical triangular mesh cells.
//!
//! The sphere is split into the eight faces of an octahedron. Northern roots
//! `N0..N3` cover `dec >= 0` in right-ascension quadrants `[0,90)`,
//! `[90,180)`, `[180,270)`, `[270,360)`; southern roots `S0..S3` mirror them.
//! Every triangle is split into four children on normalized edge midpoints:
//!
//! ```text
//! child 0: (v0, w2, w1)   child 1: (v1, w0, w2)
//! child 2: (v2, w1, w0)   child 3: (w0, w1, w2)
//! ```
//!
//! where `w0 = mid(v1, v2)`, `w1 = mid(v0, v2)`, `w2 = mid(v0, v1)`.
//! Vertices are kept counter-clockwise seen from outside the sphere.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::geom::{self, cross, dot, midpoint, normalize, Vec3};
use crate::error::{Error, Result};

/// Deepest level whose id still fits the packed 64-bit layout.
pub const MAX_SUPPORTED_LEVEL: u8 = 30;

/// Points within this angle (radians) of a shared edge are treated as on it,
/// so the lowest-numbered child wins the tie.
const EDGE_TOLERANCE: f64 = 1e-14;

const X: Vec3 = [1.0, 0.0, 0.0];
const Y: Vec3 = [0.0, 1.0, 0.0];
const Z: Vec3 = [0.0, 0.0, 1.0];
const NX: Vec3 = [-1.0, 0.0, 0.0];
const NY: Vec3 = [0.0, -1.0, 0.0];
const NZ: Vec3 = [0.0, 0.0, -1.0];

const ROOTS: [[Vec3; 3]; 8] = [
    [X, Y, Z],    // N0
    [Y, NX, Z],   // N1
    [NX, NY, Z],  // N2
    [NY, X, Z],   // N3
    [Y, X, NZ],   // S0
    [NX, Y, NZ],  // S1
    [NY, NX, NZ], // S2
    [X, NY, NZ],  // S3
];

/// A spherical triangle with counter-clockwise unit-vector corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v: [Vec3; 3],
}

impl Triangle {
    pub fn children(&self) -> [Triangle; 4] {
        let [v0, v1, v2] = self.v;
        let w0 = midpoint(v1, v2);
        let w1 = midpoint(v0, v2);
        let w2 = midpoint(v0, v1);
        [
            Triangle { v: [v0, w2, w1] },
            Triangle { v: [v1, w0, w2] },
            Triangle { v: [v2, w1, w0] },
            Triangle { v: [w0, w1, w2] },
        ]
    }

    /// Smallest signed angle-like margin of `p` against the three edges.
    /// Non-negative means inside (or on the boundary).
    pub fn margin(&self, p: Vec3) -> f64 {
        let [a, b, c] = self.v;
        let e0 = dot(normalize(cross(a, b)), p);
        let e1 = dot(normalize(cross(b, c)), p);
        let e2 = dot(normalize(cross(c, a)), p);
        e0.min(e1).min(e2)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.margin(p) >= -EDGE_TOLERANCE
    }

    pub fn centroid(&self) -> Vec3 {
        let [a, b, c] = self.v;
        normalize([a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]])
    }

    /// Spherical excess, in steradians.
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.v;
        let num = dot(a, cross(b, c)).abs();
        let den = 1.0 + dot(a, b) + dot(b, c) + dot(c, a);
        2.0 * num.atan2(den)
    }
}

/// Packed trixel id: 3-bit root followed by 2 bits per level.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrixelId {
    raw: u64,
    level: u8,
}

impl TrixelId {
    pub fn root(index: u8) -> Self {
        assert!(index < 8, "root index {index} out of range");
        TrixelId {
            raw: index as u64,
            level: 0,
        }
    }

    pub fn roots() -> impl Iterator<Item = TrixelId> {
        (0..8).map(TrixelId::root)
    }

    pub fn from_raw(raw: u64, level: u8) -> Option<Self> {
        if level > MAX_SUPPORTED_LEVEL || raw >> (3 + 2 * level as u32) != 0 {
            return None;
        }
        Some(TrixelId { raw, level })
    }

    pub fn raw(self) -> u64 {
        self.raw
    }

    pub fn level(self) -> u8 {
        self.level
    }

    pub fn root_index(self) -> u8 {
        (self.raw >> (2 * self.level as u32)) as u8
    }

    pub fn is_north(self) -> bool {
        self.root_index() < 4
    }

    pub fn child(self, i: u8) -> Self {
        debug_assert!(i < 4);
        debug_assert!(self.level < MAX_SUPPORTED_LEVEL);
        TrixelId {
            raw: (self.raw << 2) | i as u64,
            level: self.level + 1,
        }
    }

    pub fn children(self) -> [TrixelId; 4] {
        [self.child(0), self.child(1), self.child(2), self.child(3)]
    }

    pub fn parent(self) -> Option<Self> {
        (self.level > 0).then(|| TrixelId {
            raw: self.raw >> 2,
            level: self.level - 1,
        })
    }

    /// The ancestor at `level`, which is the id truncated to that many levels.
    pub fn ancestor(self, level: u8) -> Option<Self> {
        (level <= self.level).then(|| TrixelId {
            raw: self.raw >> (2 * (self.level - level) as u32),
            level,
        })
    }

    /// True when `self` is `other` or one of its ancestors.
    pub fn contains_id(self, other: TrixelId) -> bool {
        other.ancestor(self.level) == Some(self)
    }

    /// All descendants at `level` (or `self` when already that deep).
    pub fn descendants_at(self, level: u8) -> Vec<TrixelId> {
        if level <= self.level {
            return vec![self];
        }
        let shift = 2 * (level - self.level) as u32;
        let base = self.raw << shift;
        (0..(1u64 << shift))
            .map(|i| TrixelId {
                raw: base | i,
                level,
            })
            .collect()
    }

    /// Child digits from the root downwards.
    pub fn path(self) -> impl Iterator<Item = u8> {
        let level = self.level;
        let raw = self.raw;
        (0..level).map(move |i| ((raw >> (2 * (level - 1 - i) as u32)) & 3) as u8)
    }

    pub fn triangle(self) -> Triangle {
        let mut tri = Triangle {
            v: ROOTS[self.root_index() as usize],
        };
        for digit in self.path() {
            tri = tri.children()[digit as usize];
        }
        tri
    }

    /// Position in a depth-first walk: ancestors sort before descendants,
    /// siblings by child index.
    fn dfs_key(self) -> (u64, u8) {
        let shift = 2 * (MAX_SUPPORTED_LEVEL - self.level) as u32;
        (self.raw << shift, self.level)
    }
}

impl Ord for TrixelId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dfs_key().cmp(&other.dfs_key())
    }
}

impl PartialOrd for TrixelId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TrixelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let root = self.root_index();
        let hemi = if root < 4 { 'N' } else { 'S' };
        write!(f, "{hemi}{}", root % 4)?;
        for d in self.path() {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for TrixelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for TrixelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("invalid trixel id {s:?}"));
        let bytes = s.as_bytes();
        if bytes.len() < 2 || bytes.len() - 2 > MAX_SUPPORTED_LEVEL as usize {
            return Err(bad());
        }
        let hemi = match bytes[0] {
            b'N' => 0u8,
            b'S' => 4u8,
            _ => return Err(bad()),
        };
        let quad = match bytes[1] {
            c @ b'0'..=b'3' => c - b'0',
            _ => return Err(bad()),
        };
        let mut id = TrixelId::root(hemi + quad);
        for &c in &bytes[2..] {
            match c {
                b'0'..=b'3' => id = id.child(c - b'0'),
                _ => return Err(bad()),
            }
        }
        Ok(id)
    }
}

impl Serialize for TrixelId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrixelId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Root cell from the normative quadrant layout.
fn root_of(ra: f64, dec: f64) -> u8 {
    let quadrant = ((ra / 90.0).floor() as i64).clamp(0, 3) as u8;
    if dec >= 0.0 {
        quadrant
    } else {
        4 + quadrant
    }
}

/// The trixel at `level` containing `(ra, dec)`.
pub fn trixel_of(ra: f64, dec: f64, level: u8) -> Result<TrixelId> {
    if !crate::types::coordinates_valid(ra, dec) {
        return Err(Error::InvalidCoordinates { ra, dec });
    }
    if level > MAX_SUPPORTED_LEVEL {
        return Err(Error::Config(format!(
            "level {level} exceeds {MAX_SUPPORTED_LEVEL}"
        )));
    }
    let p = geom::radec_to_vec(ra, dec);
    let root = root_of(ra, dec);
    let mut id = TrixelId::root(root);
    let mut tri = Triangle {
        v: ROOTS[root as usize],
    };
    for _ in 0..level {
        let children = tri.children();
        let mut pick = None;
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, c) in children.iter().enumerate() {
            let m = c.margin(p);
            if m >= -EDGE_TOLERANCE {
                pick = Some(i);
                break;
            }
            if m > best.0 {
                best = (m, i);
            }
        }
        // Rounding can leave a point a hair outside every child; take the nearest.
        let i = pick.unwrap_or(best.1);
        id = id.child(i as u8);
        tri = children[i];
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_layout() {
        assert_eq!(trixel_of(45.0, 45.0, 0).unwrap().to_string(), "N0");
        assert_eq!(trixel_of(95.0, 1.0, 0).unwrap().to_string(), "N1");
        assert_eq!(trixel_of(185.0, 80.0, 0).unwrap().to_string(), "N2");
        assert_eq!(trixel_of(300.0, 0.0, 0).unwrap().to_string(), "N3");
        assert_eq!(trixel_of(45.0, -45.0, 0).unwrap().to_string(), "S0");
        assert_eq!(trixel_of(359.0, -1.0, 0).unwrap().to_string(), "S3");
    }

    #[test]
    fn roots_are_counter_clockwise_and_tile_the_sphere() {
        let total: f64 = TrixelId::roots()
            .map(|r| {
                let t = r.triangle();
                assert!(dot(cross(t.v[0], t.v[1]), t.v[2]) > 0.0, "{r} is not ccw");
                t.area()
            })
            .sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn root_rule_agrees_with_geometry() {
        for ra in (0..360).step_by(7) {
            for dec in (-89..=89).step_by(11) {
                let (ra, dec) = (ra as f64 + 0.5, dec as f64 + 0.25);
                let id = trixel_of(ra, dec, 0).unwrap();
                assert!(id.triangle().contains(geom::radec_to_vec(ra, dec)));
            }
        }
    }

    #[test]
    fn invalid_coordinates_rejected() {
        assert!(matches!(
            trixel_of(360.0, 0.0, 3),
            Err(Error::InvalidCoordinates { .. })
        ));
        assert!(matches!(
            trixel_of(10.0, -91.0, 3),
            Err(Error::InvalidCoordinates { .. })
        ));
    }

    #[test]
    fn string_round_trip() {
        let id = trixel_of(123.4, -56.7, 10).unwrap();
        let s = id.to_string();
        assert_eq!(s.len(), 12);
        assert!(s.starts_with('S'));
        assert_eq!(s.parse::<TrixelId>().unwrap(), id);
        assert!("X0".parse::<TrixelId>().is_err());
        assert!("N4".parse::<TrixelId>().is_err());
        assert!("N05".parse::<TrixelId>().is_err());
    }

    #[test]
    fn ancestry_helpers() {
        let id: TrixelId = "N0123".parse().unwrap();
        assert_eq!(id.level(), 3);
        assert_eq!(id.parent().unwrap().to_string(), "N012");
        assert_eq!(id.ancestor(0).unwrap().to_string(), "N0");
        assert!(id.ancestor(4).is_none());
        assert!(TrixelId::root(0).contains_id(id));
        assert!(!TrixelId::root(1).contains_id(id));
        assert_eq!(TrixelId::root(5).descendants_at(2).len(), 16);
        assert!(TrixelId::root(0) < id && id < TrixelId::root(1));
    }

    #[test]
    fn edge_tie_goes_to_lowest_child() {
        // The midpoint of N0's first edge lies on the boundary of children 0, 1 and 3.
        let p = midpoint(X, Y);
        let (ra, dec) = geom::vec_to_radec(p);
        let id = trixel_of(ra, dec.max(0.0), 1).unwrap();
        assert_eq!(id.to_string(), "N00");
    }
}
