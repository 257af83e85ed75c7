use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::placement::{rotate_ground, rotate_up, PlacementParams};

/// Default shrink factor applied to half extents before intersection tests.
pub const DEFAULT_SHRINK: f64 = 0.9;

const MIN_HALF_EXTENT: f64 = 1e-3;

/// Box that rotates about world up only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub azimuth: f64,
}

impl OrientedBox {
    pub fn new(center: Vector3<f64>, half_extents: Vector3<f64>, azimuth: f64) -> Self {
        debug_assert!(half_extents.iter().all(|&h| h > 0.0));
        Self {
            center,
            half_extents,
            azimuth,
        }
    }

    /// Tight box around template-space keypoints (extended down to the
    /// ground) under a placement.
    pub fn from_keypoints(local: &[Vector3<f64>], params: &PlacementParams) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for k in local {
            lo = lo.inf(k);
            hi = hi.sup(k);
        }
        lo.y = lo.y.min(0.0);
        let half = ((hi - lo) * 0.5 * params.scale).map(|h| h.max(MIN_HALF_EXTENT));
        let mid = (hi + lo) * 0.5;
        Self::new(params.apply(&mid), half, params.azimuth)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn shrunk(&self, factor: f64) -> Self {
        Self {
            half_extents: self.half_extents * factor,
            ..self.clone()
        }
    }

    /// Ground-plane footprint as a counterclockwise `(x, z)` polygon.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (hx, hz) = (self.half_extents.x, self.half_extents.z);
        let c = Vector2::new(self.center.x, self.center.z);
        [(-hx, -hz), (hx, -hz), (hx, hz), (-hx, hz)]
            .map(|(x, z)| c + rotate_ground(self.azimuth, &Vector2::new(x, z)))
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.half_extents;
        let mut out = [Vector3::zeros(); 8];
        for (i, o) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *o = self.center + rotate_up(self.azimuth, &Vector3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }

    fn vertical_overlap(&self, other: &Self) -> f64 {
        let lo = (self.center.y - self.half_extents.y).max(other.center.y - other.half_extents.y);
        let hi = (self.center.y + self.half_extents.y).min(other.center.y + other.half_extents.y);
        (hi - lo).max(0.0)
    }

    /// World-aligned `(x, z)` half extents when the box is axis aligned.
    fn axis_aligned_extents(&self) -> Option<Vector2<f64>> {
        let quarter = std::f64::consts::FRAC_PI_2;
        let k = (self.azimuth / quarter).round();
        if (self.azimuth - k * quarter).abs() > 1e-12 {
            return None;
        }
        let (hx, hz) = (self.half_extents.x, self.half_extents.z);
        Some(if (k as i64).rem_euclid(2) == 0 {
            Vector2::new(hx, hz)
        } else {
            Vector2::new(hz, hx)
        })
    }

    /// Distance along a unit ray to the entry point of this box, if hit.
    pub fn ray_entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = rotate_up(-self.azimuth, &(origin - self.center));
        let d = rotate_up(-self.azimuth, dir);
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for axis in 0..3 {
            let h = self.half_extents[axis];
            if d[axis].abs() < 1e-15 {
                if o[axis].abs() > h {
                    return None;
                }
                continue;
            }
            let a = (-h - o[axis]) / d[axis];
            let b = (h - o[axis]) / d[axis];
            t_near = t_near.max(a.min(b));
            t_far = t_far.min(a.max(b));
        }
        if t_near <= t_far && t_far > 0.0 {
            Some(t_near.max(0.0))
        } else {
            None
        }
    }
}

/// Intersection over union of two box volumes.
pub fn obb_iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let dy = a.vertical_overlap(b);
    if dy <= 0.0 {
        return 0.0;
    }
    let area = match (a.axis_aligned_extents(), b.axis_aligned_extents()) {
        (Some(ea), Some(eb)) => {
            let ox = (ea.x + eb.x - (a.center.x - b.center.x).abs()).max(0.0);
            let oz = (ea.y + eb.y - (a.center.z - b.center.z).abs()).max(0.0);
            ox.min(2.0 * ea.x).min(2.0 * eb.x) * oz.min(2.0 * ea.y).min(2.0 * eb.y)
        }
        _ => convex_intersection_area(&a.footprint(), &b.footprint()),
    };
    let inter = area * dy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Separating-axis overlap test on boxes shrunk by `shrink`. Touching
/// boxes do not intersect.
pub fn obb_intersects(a: &OrientedBox, b: &OrientedBox, shrink: f64) -> bool {
    debug_assert!(shrink > 0.0 && shrink <= 1.0);
    let a = a.shrunk(shrink);
    let b = b.shrunk(shrink);
    if (a.center.y - b.center.y).abs() >= a.half_extents.y + b.half_extents.y {
        return false;
    }
    let d = Vector2::new(b.center.x - a.center.x, b.center.z - a.center.z);
    let axes = |bx: &OrientedBox| {
        [
            rotate_ground(bx.azimuth, &Vector2::new(1.0, 0.0)),
            rotate_ground(bx.azimuth, &Vector2::new(0.0, 1.0)),
        ]
    };
    let (aa, ba) = (axes(&a), axes(&b));
    let radius = |bx: &OrientedBox, ax: &[Vector2<f64>; 2], n: &Vector2<f64>| {
        bx.half_extents.x * ax[0].dot(n).abs() + bx.half_extents.z * ax[1].dot(n).abs()
    };
    for n in aa.iter().chain(ba.iter()) {
        if d.dot(n).abs() >= radius(&a, &aa, n) + radius(&b, &ba, n) {
            return false;
        }
    }
    true
}

fn signed_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum::<f64>()
        * 0.5
}

fn ccw(poly: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut v = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Area of the intersection of two convex polygons (Sutherland-Hodgman).
pub fn convex_intersection_area(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> f64 {
    let clip = ccw(clip);
    let mut out = ccw(subject);
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            return 0.0;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let edge = b - a;
        let side = |p: &Vector2<f64>| edge.x * (p.y - a.y) - edge.y * (p.x - a.x);
        let input = std::mem::take(&mut out);
        let n = input.len();
        for j in 0..n {
            let (p, q) = (input[j], input[(j + 1) % n]);
            let (sp, sq) = (side(&p), side(&q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    if out.len() < 3 {
        return 0.0;
    }
    signed_area(&out).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit_at(x: f64, z: f64, azimuth: f64) -> OrientedBox {
        OrientedBox::new(Vector3::new(x, 0.5, z), Vector3::repeat(0.5), azimuth)
    }

    #[test]
    fn identical_boxes() {
        let a = unit_at(0.2, 3.0, 0.4);
        assert_abs_diff_eq!(obb_iou_3d(&a, &a), 1.0, epsilon = 1e-12);
        assert!(obb_intersects(&a, &a, DEFAULT_SHRINK));
    }

    #[test]
    fn disjoint_boxes() {
        let a = unit_at(0.0, 0.0, 0.0);
        let b = unit_at(10.0, 0.0, 0.3);
        assert_eq!(obb_iou_3d(&a, &b), 0.0);
        assert!(!obb_intersects(&a, &b, DEFAULT_SHRINK));
    }

    #[test]
    fn half_offset_unit_cubes() {
        let iou = obb_iou_3d(&unit_at(0.0, 0.0, 0.0), &unit_at(0.5, 0.0, 0.0));
        assert_abs_diff_eq!(iou, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rotated_path_matches_axis_aligned_path() {
        // a quarter turn of a cube is the same set; the clipping path must agree
        let a = unit_at(0.0, 0.0, 0.0);
        let b = unit_at(0.5, 0.0, 1e-9);
        assert_abs_diff_eq!(obb_iou_3d(&a, &b), 1.0 / 3.0, epsilon = 1e-8);
        let c = unit_at(0.5, 0.0, PI / 2.0);
        assert_abs_diff_eq!(obb_iou_3d(&a, &c), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn shrink_tolerates_near_contact() {
        let a = unit_at(0.0, 0.0, 0.0);
        let b = unit_at(1.95, 0.0, 0.0);
        assert!(!obb_intersects(&a, &b, DEFAULT_SHRINK));
        let c = unit_at(0.95, 0.0, 0.0);
        assert!(!obb_intersects(&a, &c, DEFAULT_SHRINK));
        assert!(obb_intersects(&a, &c, 1.0));
    }

    #[test]
    fn rotated_square_overlap_area() {
        // square rotated 45 degrees over an axis-aligned square of the same center
        let s = [
            Vector2::new(-1.0, -1.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(-1.0, 1.0),
        ];
        let r = 2f64.sqrt();
        let d = [
            Vector2::new(0.0, -r),
            Vector2::new(r, 0.0),
            Vector2::new(0.0, r),
            Vector2::new(-r, 0.0),
        ];
        // octagon area: square minus 4 corner triangles of leg (2 - r)
        let leg = 2.0 - r;
        let expected = 4.0 - 4.0 * 0.5 * leg * leg;
        assert_abs_diff_eq!(convex_intersection_area(&s, &d), expected, epsilon = 1e-12);
    }

    #[test]
    fn ray_entry_distance() {
        let b = unit_at(0.0, 5.0, 0.3);
        let t = b
            .ray_entry(&Vector3::new(0.0, 0.5, 0.0), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert!(t > 4.3 && t < 4.5);
        assert!(b
            .ray_entry(&Vector3::new(0.0, 0.5, 0.0), &Vector3::new(0.0, 0.0, -1.0))
            .is_none());
    }

    #[test]
    fn box_from_keypoints_covers_them() {
        let kp = vec![
            Vector3::new(-0.2, 0.0, -0.25),
            Vector3::new(0.2, 0.0, -0.25),
            Vector3::new(0.2, 0.9, 0.25),
        ];
        let params = PlacementParams::new(Vector2::new(1.0, 3.0), 0.7, 1.2, vec![]);
        let b = OrientedBox::from_keypoints(&kp, &params);
        assert_abs_diff_eq!(
            b.half_extents,
            Vector3::new(0.24, 0.54, 0.3),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(b.center.y, 0.54, epsilon = 1e-12);
        assert_abs_diff_eq!(b.center.x, 1.0, epsilon = 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (
            -1.0f64..1.0,
            0.0f64..1.0,
            -1.0f64..1.0,
            0.1f64..0.8,
            0.1f64..0.8,
            0.1f64..0.8,
            -PI..PI,
        )
            .prop_map(|(x, y, z, hx, hy, hz, a)| {
                OrientedBox::new(Vector3::new(x, y, z), Vector3::new(hx, hy, hz), a)
            })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = obb_iou_3d(&a, &b);
            let ba = obb_iou_3d(&b, &a);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn iou_non_increasing_with_distance(a in arb_box(), steps in 1usize..20) {
            let mut prev = 1.0 + 1e-12;
            for i in 0..=steps {
                let mut b = a.clone();
                b.center.x += i as f64 * 0.1;
                let v = obb_iou_3d(&a, &b);
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }

        #[test]
        fn intersection_implies_positive_iou(a in arb_box(), b in arb_box()) {
            if obb_intersects(&a, &b, 1.0) {
                prop_assert!(obb_iou_3d(&a, &b) > 0.0);
            }
        }
    }
}
