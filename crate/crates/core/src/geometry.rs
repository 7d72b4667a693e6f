//! Small vector and primitive toolkit shared by kinetics, agents and sensors.
//!
//! World frame is z-up; an instance's `position` is the center of its
//! footprint at the base of the object.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::catalog::{ObjectClass, Shape};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let l = self.length();
        if l == 0.0 {
            self
        } else {
            self * (1.0 / l)
        }
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Normalizes an angle to `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// cos/sin of a yaw, exact at multiples of π/2 so quarter-turned boxes keep
/// exact footprints.
pub fn yaw_cos_sin(yaw: f64) -> (f64, f64) {
    let q = yaw / FRAC_PI_2;
    let k = q.round();
    if (q - k).abs() < 1e-12 {
        match (k as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (yaw.cos(), yaw.sin())
    }
}

/// Snaps yaws within 1e-12 of a quarter turn onto it, then normalizes.
pub fn snap_yaw(yaw: f64) -> f64 {
    let q = yaw / FRAC_PI_2;
    let k = q.round();
    if (q - k).abs() < 1e-12 {
        normalize_angle(k * FRAC_PI_2)
    } else {
        normalize_angle(yaw)
    }
}

/// Signed smallest difference `b - a` in `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Aabb {
        Aabb { min, max }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn footprint(&self) -> Rect {
        Rect {
            min: [self.min.x, self.min.y],
            max: [self.max.x, self.max.y],
        }
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        (0..3).all(|i| p.get(i) >= self.min.get(i) && p.get(i) <= self.max.get(i))
    }

    /// Euclidean distance between the two boxes (0 when they intersect).
    pub fn distance(&self, o: &Aabb) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            let gap = (self.min.get(i) - o.max.get(i))
                .max(o.min.get(i) - self.max.get(i))
                .max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    /// Volumes share positive measure (touching faces do not count).
    pub fn overlaps(&self, o: &Aabb, tol: f64) -> bool {
        (0..3).all(|i| {
            self.min.get(i) < o.max.get(i) - tol && o.min.get(i) < self.max.get(i) - tol
        })
    }

    pub fn z_disjoint(&self, o: &Aabb) -> bool {
        self.max.z <= o.min.z + 1e-9 || o.max.z <= self.min.z + 1e-9
    }

    /// Slab test; returns entry/exit parameters along the ray.
    pub fn ray_interval(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let o = origin.get(i);
            let d = dir.get(i);
            let (lo, hi) = (self.min.get(i), self.max.get(i));
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let inv = 1.0 / d;
                let (a, b) = ((lo - o) * inv, (hi - o) * inv);
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }
}

/// Axis-aligned rectangle in the floor plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.max[0] - self.min[0]).hypot(self.max[1] - self.min[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn contains_rect(&self, o: &Rect, tol: f64) -> bool {
        o.min[0] >= self.min[0] - tol
            && o.min[1] >= self.min[1] - tol
            && o.max[0] <= self.max[0] + tol
            && o.max[1] <= self.max[1] + tol
    }

    /// Positive-area overlap.
    pub fn overlaps(&self, o: &Rect, tol: f64) -> bool {
        self.min[0] < o.max[0] - tol
            && o.min[0] < self.max[0] - tol
            && self.min[1] < o.max[1] - tol
            && o.min[1] < self.max[1] - tol
    }

    /// Euclidean clearance between two rectangles (0 if they touch or overlap).
    pub fn gap(&self, o: &Rect) -> f64 {
        let dx = (self.min[0] - o.max[0]).max(o.min[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - o.max[1]).max(o.min[1] - self.max[1]).max(0.0);
        dx.hypot(dy)
    }

    /// Distance from a point to the rectangle (0 inside).
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min[0] - p[0]).max(p[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - p[1]).max(p[1] - self.max[1]).max(0.0);
        dx.hypot(dy)
    }

    pub fn closest_point(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
        ]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Rect {
        Rect {
            min: [self.min[0] + dx, self.min[1] + dy],
            max: [self.max[0] + dx, self.max[1] + dy],
        }
    }
}

/// Footprint half-widths of a class rotated by `yaw`.
pub fn rotated_half_extents(class: &ObjectClass, yaw: f64) -> (f64, f64) {
    let hx = 0.5 * class.extents[0];
    let hy = 0.5 * class.extents[1];
    match class.shape {
        Shape::Sphere | Shape::Cylinder => (hx, hy),
        Shape::Box | Shape::OpenBox => {
            let (c, s) = yaw_cos_sin(yaw);
            (c.abs() * hx + s.abs() * hy, s.abs() * hx + c.abs() * hy)
        }
    }
}

/// Analytic primitive used for rendering and line-of-sight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Box with local half extents, rotated by yaw about z around `center`.
    Obb { center: Vec3, half: Vec3, cos: f64, sin: f64 },
    Sphere { center: Vec3, radius: f64 },
    /// Vertical cylinder.
    Cylinder { base: Vec3, radius: f64, height: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

impl Primitive {
    pub fn bounds(&self) -> Aabb {
        match *self {
            Primitive::Obb { center, half, cos, sin } => {
                let hx = cos.abs() * half.x + sin.abs() * half.y;
                let hy = sin.abs() * half.x + cos.abs() * half.y;
                let h = Vec3::new(hx, hy, half.z);
                Aabb::new(center - h, center + h)
            }
            Primitive::Sphere { center, radius } => {
                let h = Vec3::new(radius, radius, radius);
                Aabb::new(center - h, center + h)
            }
            Primitive::Cylinder { base, radius, height } => Aabb::new(
                Vec3::new(base.x - radius, base.y - radius, base.z),
                Vec3::new(base.x + radius, base.y + radius, base.z + height),
            ),
        }
    }

    /// Nearest intersection with `t > t_min`; `dir` need not be unit length.
    pub fn intersect(&self, origin: Vec3, dir: Vec3, t_min: f64) -> Option<Hit> {
        match *self {
            Primitive::Obb { center, half, cos, sin } => {
                // Into the local frame: rotate by -yaw.
                let rel = origin - center;
                let lo = Vec3::new(cos * rel.x + sin * rel.y, -sin * rel.x + cos * rel.y, rel.z);
                let ld = Vec3::new(cos * dir.x + sin * dir.y, -sin * dir.x + cos * dir.y, dir.z);
                let local = Aabb::new(-half, half);
                let (t0, t1) = local.ray_interval(lo, ld)?;
                let t = if t0 > t_min {
                    t0
                } else if t1 > t_min {
                    t1
                } else {
                    return None;
                };
                let p = lo + ld * t;
                // Face whose plane the hit lies on (largest normalized coordinate).
                let mut axis = 0;
                let mut best = f64::NEG_INFINITY;
                for i in 0..3 {
                    let r = (p.get(i) / half.get(i)).abs();
                    if r > best {
                        best = r;
                        axis = i;
                    }
                }
                let sign = if p.get(axis) >= 0.0 { 1.0 } else { -1.0 };
                let ln = match axis {
                    0 => Vec3::new(sign, 0.0, 0.0),
                    1 => Vec3::new(0.0, sign, 0.0),
                    _ => Vec3::new(0.0, 0.0, sign),
                };
                let normal = Vec3::new(cos * ln.x - sin * ln.y, sin * ln.x + cos * ln.y, ln.z);
                Some(Hit { t, normal })
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let mut t = (-b - sq) / a;
                if t <= t_min {
                    t = (-b + sq) / a;
                    if t <= t_min {
                        return None;
                    }
                }
                let normal = ((origin + dir * t) - center).normalized();
                Some(Hit { t, normal })
            }
            Primitive::Cylinder { base, radius, height } => {
                let mut best: Option<Hit> = None;
                let mut consider = |t: f64, normal: Vec3| {
                    if t > t_min && best.is_none_or(|h| t < h.t) {
                        best = Some(Hit { t, normal });
                    }
                };
                // Side.
                let ox = origin.x - base.x;
                let oy = origin.y - base.y;
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 0.0 {
                    let b = ox * dir.x + oy * dir.y;
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / a, (-b + sq) / a] {
                            let z = origin.z + dir.z * t;
                            if z >= base.z && z <= base.z + height {
                                let px = ox + dir.x * t;
                                let py = oy + dir.y * t;
                                consider(t, Vec3::new(px, py, 0.0).normalized());
                            }
                        }
                    }
                }
                // Caps.
                if dir.z != 0.0 {
                    for (z, nz) in [(base.z, -1.0), (base.z + height, 1.0)] {
                        let t = (z - origin.z) / dir.z;
                        let px = ox + dir.x * t;
                        let py = oy + dir.y * t;
                        if px * px + py * py <= radius * radius {
                            consider(t, Vec3::new(0.0, 0.0, nz));
                        }
                    }
                }
                best
            }
        }
    }
}

/// Solid parts of an instance of `class` at `position`/`yaw`.
///
/// OpenBox is four walls plus a floor (wall thickness 10% of each extent);
/// a Box with clearance is a top slab on four thin legs.
pub fn class_parts(class: &ObjectClass, position: Vec3, yaw: f64) -> Vec<Primitive> {
    let (cos, sin) = yaw_cos_sin(yaw);
    let [ex, ey, ez] = class.extents;
    let local_box = |cx: f64, cy: f64, z0: f64, hx: f64, hy: f64, hz: f64| {
        let center = Vec3::new(
            position.x + cos * cx - sin * cy,
            position.y + sin * cx + cos * cy,
            position.z + z0 + hz,
        );
        Primitive::Obb { center, half: Vec3::new(hx, hy, hz), cos, sin }
    };
    match class.shape {
        Shape::Sphere => vec![Primitive::Sphere {
            center: Vec3::new(position.x, position.y, position.z + 0.5 * ez),
            radius: 0.5 * ex,
        }],
        Shape::Cylinder => vec![Primitive::Cylinder { base: position, radius: 0.5 * ex, height: ez }],
        Shape::Box if class.clearance > 0.0 => {
            let slab = ez - class.clearance;
            let leg = 0.06_f64.min(0.25 * ex).min(0.25 * ey);
            let mut parts = vec![local_box(0.0, 0.0, class.clearance, 0.5 * ex, 0.5 * ey, 0.5 * slab)];
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                parts.push(local_box(
                    sx * (0.5 * ex - 0.5 * leg),
                    sy * (0.5 * ey - 0.5 * leg),
                    0.0,
                    0.5 * leg,
                    0.5 * leg,
                    0.5 * class.clearance,
                ));
            }
            parts
        }
        Shape::Box => vec![local_box(0.0, 0.0, 0.0, 0.5 * ex, 0.5 * ey, 0.5 * ez)],
        Shape::OpenBox => {
            let (wx, wy, wz) = (0.1 * ex, 0.1 * ey, 0.1 * ez);
            let wall_h = 0.5 * (ez - wz);
            vec![
                local_box(0.0, 0.0, 0.0, 0.5 * ex, 0.5 * ey, 0.5 * wz),
                local_box(-0.5 * ex + 0.5 * wx, 0.0, wz, 0.5 * wx, 0.5 * ey, wall_h),
                local_box(0.5 * ex - 0.5 * wx, 0.0, wz, 0.5 * wx, 0.5 * ey, wall_h),
                local_box(0.0, -0.5 * ey + 0.5 * wy, wz, 0.5 * ex - wx, 0.5 * wy, wall_h),
                local_box(0.0, 0.5 * ey - 0.5 * wy, wz, 0.5 * ex - wx, 0.5 * wy, wall_h),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turns_are_exact() {
        assert_eq!(yaw_cos_sin(FRAC_PI_2), (0.0, 1.0));
        assert_eq!(yaw_cos_sin(PI), (-1.0, 0.0));
        assert_eq!(snap_yaw(4.0 * FRAC_PI_2), 0.0);
    }

    #[test]
    fn rect_gap_is_euclidean() {
        let a = Rect { min: [0.0, 0.0], max: [1.0, 1.0] };
        let b = a.translated(1.3, 1.4);
        assert!((a.gap(&b) - 0.3f64.hypot(0.4)).abs() < 1e-12);
        assert_eq!(a.gap(&a.translated(0.5, 0.0)), 0.0);
    }

    #[test]
    fn sphere_hit_from_above() {
        let s = Primitive::Sphere { center: Vec3::new(0.0, 0.0, 1.0), radius: 0.5 };
        let h = s.intersect(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0), 0.0).unwrap();
        assert!((h.t - 3.5).abs() < 1e-12);
        assert_eq!(h.normal, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn cylinder_side_and_cap() {
        let c = Primitive::Cylinder { base: Vec3::ZERO, radius: 0.5, height: 1.0 };
        let side = c.intersect(Vec3::new(-3.0, 0.0, 0.5), Vec3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert!((side.t - 2.5).abs() < 1e-12);
        assert!((side.normal.x + 1.0).abs() < 1e-12);
        let cap = c.intersect(Vec3::new(0.1, 0.1, 4.0), Vec3::new(0.0, 0.0, -1.0), 0.0).unwrap();
        assert!((cap.t - 3.0).abs() < 1e-12);
        assert_eq!(cap.normal, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn rotated_obb_normal_is_rotated() {
        let (cos, sin) = yaw_cos_sin(FRAC_PI_2);
        let b = Primitive::Obb { center: Vec3::ZERO, half: Vec3::new(1.0, 0.25, 0.25), cos, sin };
        let h = b.intersect(Vec3::new(0.0, -5.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 0.0).unwrap();
        assert!((h.t - 4.0).abs() < 1e-12);
        assert_eq!(h.normal, Vec3::new(0.0, -1.0, 0.0));
    }
}
