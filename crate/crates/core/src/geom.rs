//! Planar rigid transforms and oriented boxes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Planar pose: position in meters, heading in radians wrapped to `(-π, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn transform(&self) -> Se2 {
        Se2::new(self.theta, self.x, self.y)
    }

    /// `self ∘ local`: the pose of `local` expressed in the parent frame.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let t = self.transform().compose(&local.transform());
        t.to_pose()
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rigid transform `p ↦ R(θ)·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se2 {
    pub cos: f64,
    pub sin: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Se2 {
    pub fn new(theta: f64, tx: f64, ty: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        Self { cos, sin, tx, ty }
    }

    pub fn identity() -> Self {
        Self {
            cos: 1.0,
            sin: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.cos * p.0 - self.sin * p.1 + self.tx,
            self.sin * p.0 + self.cos * p.1 + self.ty,
        )
    }

    /// Rotates a direction without translating it.
    pub fn rotate(&self, v: (f64, f64)) -> (f64, f64) {
        (self.cos * v.0 - self.sin * v.1, self.sin * v.0 + self.cos * v.1)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Se2) -> Se2 {
        let (tx, ty) = self.apply((other.tx, other.ty));
        Se2 {
            cos: self.cos * other.cos - self.sin * other.sin,
            sin: self.sin * other.cos + self.cos * other.sin,
            tx,
            ty,
        }
    }

    pub fn inverse(&self) -> Se2 {
        Se2 {
            cos: self.cos,
            sin: -self.sin,
            tx: -(self.cos * self.tx + self.sin * self.ty),
            ty: self.sin * self.tx - self.cos * self.ty,
        }
    }

    /// Same rotation, translation divided by `res` (meters → cells).
    pub fn scaled_translation(&self, res: f64) -> Se2 {
        Se2 {
            tx: self.tx / res,
            ty: self.ty / res,
            ..*self
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.cos, -self.sin, self.tx],
            [self.sin, self.cos, self.ty],
            [0.0, 0.0, 1.0],
        ]
    }

    pub fn to_pose(&self) -> Pose2 {
        Pose2::new(self.tx, self.ty, self.theta())
    }
}

/// Transform mapping coordinates in the sender's frame into the receiver's
/// frame: `receiver⁻¹ ∘ sender`.
pub fn relative_transform(sender: &Pose2, receiver: &Pose2) -> Se2 {
    receiver.transform().inverse().compose(&sender.transform())
}

/// Oriented rectangle: center, extent along the heading (`length`), extent
/// across it (`width`), and heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    pub heading: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, length: f64, width: f64, heading: f64) -> Self {
        Self {
            cx,
            cy,
            length,
            width,
            heading: wrap_angle(heading),
        }
    }

    pub fn from_pose(p: &Pose2, length: f64, width: f64) -> Self {
        Self::new(p.x, p.y, length, width, p.theta)
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.cx, self.cy, self.heading)
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let t = Se2::new(self.heading, self.cx, self.cy);
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [
            t.apply((hl, hw)),
            t.apply((-hl, hw)),
            t.apply((-hl, -hw)),
            t.apply((hl, -hw)),
        ]
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let local = Se2::new(self.heading, self.cx, self.cy).inverse().apply(p);
        local.0.abs() <= self.length / 2.0 && local.1.abs() <= self.width / 2.0
    }

    /// Box re-expressed through a rigid transform.
    pub fn transformed(&self, t: &Se2) -> OrientedBox {
        let (cx, cy) = t.apply((self.cx, self.cy));
        OrientedBox::new(cx, cy, self.length, self.width, self.heading + t.theta())
    }

    /// Distance along the ray `origin + s·dir` (unit `dir`) to the first
    /// boundary crossing, if any lies at `s ≥ 0`. Origins inside the box
    /// report no hit.
    pub fn ray_hit(&self, origin: (f64, f64), dir: (f64, f64)) -> Option<f64> {
        let inv = Se2::new(self.heading, self.cx, self.cy).inverse();
        let o = inv.apply(origin);
        let d = inv.rotate(dir);
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for (oc, dc, half) in [(o.0, d.0, hl), (o.1, d.1, hw)] {
            if dc.abs() < 1e-15 {
                if oc.abs() > half {
                    return None;
                }
            } else {
                let a = (-half - oc) / dc;
                let b = (half - oc) / dc;
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                t_min = t_min.max(lo);
                t_max = t_max.min(hi);
            }
        }
        if t_max < t_min || t_min < 0.0 {
            return None;
        }
        Some(t_min)
    }
}

/// Signed area of a polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a.0 * b.1 - b.0 * a.1;
    }
    0.5 * s
}

/// Sutherland–Hodgman clipping of `subject` by a convex counter-clockwise
/// `clip` polygon.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(th in -4.0f64..4.0, x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let t = Se2::new(th, x, y);
            let id = t.compose(&t.inverse());
            prop_assert!((id.cos - 1.0).abs() < 1e-12 && id.sin.abs() < 1e-12);
            prop_assert!(id.tx.abs() < 1e-12 && id.ty.abs() < 1e-12);
        }

        #[test]
        fn relative_transform_round_trips(a in proptest::array::uniform3(-80.0f64..80.0), b in proptest::array::uniform3(-80.0f64..80.0), p in proptest::array::uniform2(-50.0f64..50.0)) {
            let s = Pose2::new(a[0], a[1], a[2]);
            let r = Pose2::new(b[0], b[1], b[2]);
            let fwd = relative_transform(&s, &r);
            let back = relative_transform(&r, &s);
            let q = back.apply(fwd.apply((p[0], p[1])));
            prop_assert!((q.0 - p[0]).abs() < 1e-10 && (q.1 - p[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn ray_hits_front_face() {
        let b = OrientedBox::new(10.0, 0.0, 4.0, 1.0, 0.0);
        let d = b.ray_hit((0.0, 0.0), (1.0, 0.0)).unwrap();
        assert!((d - 8.0).abs() < 1e-12);
        assert!(b.ray_hit((0.0, 0.0), (-1.0, 0.0)).is_none());
        assert!(b.ray_hit((10.0, 0.0), (1.0, 0.0)).is_none());
    }

    #[test]
    fn clipping_unit_squares() {
        let a = OrientedBox::new(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = OrientedBox::new(0.5, 0.0, 1.0, 1.0, 0.0);
        let inter = clip_polygon(&a.corners(), &b.corners());
        assert!((polygon_area(&inter) - 0.5).abs() < 1e-12);
    }
}
