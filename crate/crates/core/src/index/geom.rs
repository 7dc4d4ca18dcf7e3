//! Unit-sphere vector helpers. Angles in the public surface are degrees;
//! everything here works in radians on unit vectors.

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[inline]
pub fn neg(a: Vec3) -> Vec3 {
    [-a[0], -a[1], -a[2]]
}

/// Normalized midpoint of two unit vectors.
#[inline]
pub fn midpoint(a: Vec3, b: Vec3) -> Vec3 {
    normalize([a[0] + b[0], a[1] + b[1], a[2] + b[2]])
}

pub fn radec_to_vec(ra_deg: f64, dec_deg: f64) -> Vec3 {
    let (ra, dec) = (ra_deg.to_radians(), dec_deg.to_radians());
    let (sd, cd) = dec.sin_cos();
    let (sr, cr) = ra.sin_cos();
    [cd * cr, cd * sr, sd]
}

/// Inverse of [`radec_to_vec`]; ra is wrapped into `[0, 360)`.
pub fn vec_to_radec(v: Vec3) -> (f64, f64) {
    let dec = v[2].clamp(-1.0, 1.0).asin().to_degrees();
    let mut ra = v[1].atan2(v[0]).to_degrees();
    if ra < 0.0 {
        ra += 360.0;
    }
    if ra >= 360.0 {
        ra -= 360.0;
    }
    (ra, dec)
}

/// Angle between two unit vectors in radians, accurate at small and large separations.
#[inline]
pub fn angle(a: Vec3, b: Vec3) -> f64 {
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Great-circle separation in degrees.
pub fn separation_deg(ra1: f64, dec1: f64, ra2: f64, dec2: f64) -> f64 {
    angle(radec_to_vec(ra1, dec1), radec_to_vec(ra2, dec2)).to_degrees()
}

/// Minimum angle from `p` to the minor great-circle arc `a`..`b`.
pub fn arc_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let n = cross(a, b);
    let nn = norm(n);
    let endpoints = angle(p, a).min(angle(p, b));
    if nn < 1e-300 {
        return endpoints;
    }
    let n = [n[0] / nn, n[1] / nn, n[2] / nn];
    let pn = dot(p, n);
    let proj = [p[0] - pn * n[0], p[1] - pn * n[1], p[2] - pn * n[2]];
    let pl = norm(proj);
    if pl < 1e-300 {
        // p is a pole of the arc's great circle; every arc point is 90 degrees away.
        return std::f64::consts::FRAC_PI_2;
    }
    let q = [proj[0] / pl, proj[1] / pl, proj[2] / pl];
    let within = dot(cross(a, q), n) >= 0.0 && dot(cross(q, b), n) >= 0.0;
    if within {
        angle(p, q).min(endpoints)
    } else {
        endpoints
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radec_round_trip() {
        for &(ra, dec) in &[(0.0, 0.0), (45.0, 45.0), (359.5, -89.0), (180.0, 12.5)] {
            let (r, d) = vec_to_radec(radec_to_vec(ra, dec));
            assert!((r - ra).abs() < 1e-9 && (d - dec).abs() < 1e-9, "{ra},{dec} -> {r},{d}");
        }
    }

    #[test]
    fn separation_small_angles() {
        let s = separation_deg(10.0, 0.0, 10.0, 1.0 / 3600.0);
        assert!((s - 1.0 / 3600.0).abs() < 1e-15);
    }

    #[test]
    fn arc_distance_interior_and_endpoint() {
        let a = radec_to_vec(0.0, 0.0);
        let b = radec_to_vec(90.0, 0.0);
        let p = radec_to_vec(45.0, 10.0);
        assert!((arc_distance(p, a, b).to_degrees() - 10.0).abs() < 1e-9);
        let q = radec_to_vec(120.0, 0.0);
        assert!((arc_distance(q, a, b).to_degrees() - 30.0).abs() < 1e-9);
    }
}
