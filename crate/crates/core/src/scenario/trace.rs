//! Line-of-sight and first-order image-method paths in a 2D scene with
//! absorbing rectangular blockers.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{Geometry, Location, Rect, Reflector};
use crate::channel::{ArrayConfig, MultipathComponent, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

/// Endfire directions are pulled this far inside (0, pi).
const AOA_GUARD: f64 = 1e-9;

type P2 = [f64; 2];

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: P2) -> f64 {
    a[0].hypot(a[1])
}

/// Liang-Barsky test of segment `a -> b` against a closed rectangle.
fn segment_hits_rect(a: P2, b: P2, r: &Rect) -> bool {
    let d = sub(b, a);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-d[0], a[0] - r.x[0]),
        (d[0], r.x[1] - a[0]),
        (-d[1], a[1] - r.y[0]),
        (d[1], r.y[1] - a[1]),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

fn blocked(a: P2, b: P2, blockers: &[Rect]) -> bool {
    blockers.iter().any(|r| segment_hits_rect(a, b, r))
}

/// Angle between the array axis (+x) and the departure direction `dir`.
fn aoa(dir: P2) -> f64 {
    let c = (dir[0] / norm(dir)).clamp(-1.0, 1.0);
    c.acos().clamp(AOA_GUARD, PI - AOA_GUARD)
}

fn free_space(gain: Complex64, length_2d: f64, dz: f64, dir: P2, wavelength: f64) -> MultipathComponent {
    let d = length_2d.hypot(dz);
    let magnitude = wavelength / (4.0 * PI * d);
    let phase = -2.0 * PI * d / wavelength;
    MultipathComponent::new(gain * Complex64::from_polar(magnitude, phase), aoa(dir), d / SPEED_OF_LIGHT)
}

/// Mirror image of `p` across the infinite line through the reflector.
fn mirror(p: P2, refl: &Reflector) -> P2 {
    let u = sub(refl.p1, refl.p0);
    let len2 = u[0] * u[0] + u[1] * u[1];
    let v = sub(p, refl.p0);
    let t = (v[0] * u[0] + v[1] * u[1]) / len2;
    let foot = [refl.p0[0] + t * u[0], refl.p0[1] + t * u[1]];
    [2.0 * foot[0] - p[0], 2.0 * foot[1] - p[1]]
}

fn reflected_path(bs: P2, ue: P2, dz: f64, refl: &Reflector, geo: &Geometry, wavelength: f64) -> Option<MultipathComponent> {
    let wall = sub(refl.p1, refl.p0);
    let side_bs = cross(wall, sub(bs, refl.p0));
    let side_ue = cross(wall, sub(ue, refl.p0));
    if side_bs == 0.0 || side_ue == 0.0 || side_bs.signum() != side_ue.signum() {
        return None;
    }
    let image = mirror(bs, refl);
    // intersect image -> ue with the wall segment
    let ray = sub(ue, image);
    let denom = cross(ray, wall);
    if denom == 0.0 {
        return None;
    }
    let w = sub(refl.p0, image);
    let t = cross(w, wall) / denom;
    let s = cross(w, ray) / denom;
    if !(0.0..=1.0).contains(&s) || t <= 0.0 || t >= 1.0 {
        return None;
    }
    let hit = [image[0] + t * ray[0], image[1] + t * ray[1]];
    if blocked(bs, hit, &geo.blockers) || blocked(hit, ue, &geo.blockers) {
        return None;
    }
    let length = norm(ray);
    Some(free_space(refl.gain(), length, dz, sub(hit, bs), wavelength))
}

/// Propagation paths from the BS to one UE position.
pub fn trace_paths(ue: &Location, geo: &Geometry, cfg: &ArrayConfig) -> Result<Vec<MultipathComponent>> {
    let bs = [geo.bs_location.x, geo.bs_location.y];
    let u = [ue.x, ue.y];
    if bs == u {
        return Err(Error::domain("UE coincides with the BS in the horizontal plane"));
    }
    let dz = ue.z - geo.bs_location.z;
    let wavelength = cfg.wavelength();
    let mut paths = Vec::with_capacity(1 + geo.reflectors.len());
    if !blocked(bs, u, &geo.blockers) {
        paths.push(free_space(Complex64::new(1.0, 0.0), norm(sub(u, bs)), dz, sub(u, bs), wavelength));
    }
    paths.extend(
        geo.reflectors
            .iter()
            .filter_map(|r| reflected_path(bs, u, dz, r, geo, wavelength)),
    );
    Ok(paths)
}
