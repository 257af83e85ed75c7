use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2*pi for tiny negative inputs
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Rotation about world up (`+y`) by `theta`.
///
/// Uses the right-handed convention, counterclockwise when seen from above:
/// `+x` turns toward `-z`.
pub fn rotate_up(theta: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)
}

/// Ground-plane rotation matching [`rotate_up`] for `(x, z)` vectors.
pub fn rotate_ground(theta: f64, v: &Vector2<f64>) -> Vector2<f64> {
    let (s, c) = theta.sin_cos();
    Vector2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
}

/// Pose and shape of one object: ground translation `(x, z)`, azimuth,
/// uniform scale and PCA deformation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub translation: Vector2<f64>,
    pub azimuth: f64,
    pub scale: f64,
    pub deform: Vec<f64>,
}

impl PlacementParams {
    pub fn new(translation: Vector2<f64>, azimuth: f64, scale: f64, deform: Vec<f64>) -> Self {
        Self {
            translation,
            azimuth: wrap_angle(azimuth),
            scale,
            deform,
        }
    }

    /// Unit scale, zero deformation, at the given ground pose.
    pub fn rigid(translation: Vector2<f64>, azimuth: f64, modes: usize) -> Self {
        Self::new(translation, azimuth, 1.0, vec![0.0; modes])
    }

    pub fn is_valid(&self, modes: usize) -> bool {
        self.scale > 0.0
            && self.scale.is_finite()
            && self.deform.len() == modes
            && (-PI..PI).contains(&self.azimuth)
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// World position of a template-space point under this placement.
    pub fn apply(&self, local: &Vector3<f64>) -> Vector3<f64> {
        let r = rotate_up(self.azimuth, &(local * self.scale));
        Vector3::new(r.x + self.translation.x, r.y, r.z + self.translation.y)
    }
}

/// Rotates template keypoints about up, scales them, and translates them
/// along the ground plane. Heights are scaled but never translated.
pub fn place_keypoints(template: &[Vector3<f64>], params: &PlacementParams) -> Vec<Vector3<f64>> {
    template.iter().map(|k| params.apply(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    #[test]
    fn identity_placement() {
        let kp = vec![Vector3::new(0.3, 0.1, -0.2), Vector3::new(-0.4, 0.9, 0.25)];
        let out = place_keypoints(&kp, &PlacementParams::rigid(Vector2::zeros(), 0.0, 0));
        assert_eq!(out, kp);
    }

    #[test]
    fn half_turn() {
        let out = place_keypoints(
            &[Vector3::new(1.0, 0.0, 0.0)],
            &PlacementParams::rigid(Vector2::zeros(), PI, 0),
        );
        assert_abs_diff_eq!(
            (out[0] - Vector3::new(-1.0, 0.0, 0.0)).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quarter_turn_scaled_translated_matches_matrix_composition() {
        let theta = PI / 2.0;
        let rot = Matrix3::new(
            theta.cos(),
            0.0,
            theta.sin(),
            0.0,
            1.0,
            0.0,
            -theta.sin(),
            0.0,
            theta.cos(),
        );
        let k = Vector3::new(1.0, 0.0, 0.0);
        let expected = rot * (2.0 * k) + Vector3::new(3.0, 0.0, 4.0);
        let params = PlacementParams::new(Vector2::new(3.0, 4.0), theta, 2.0, vec![]);
        let out = place_keypoints(&[k], &params);
        assert_abs_diff_eq!((out[0] - expected).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            (out[0] - Vector3::new(3.0, 0.0, 2.0)).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn heights_are_scaled_not_translated() {
        let params = PlacementParams::new(Vector2::new(5.0, -2.0), 1.0, 1.5, vec![]);
        let out = params.apply(&Vector3::new(0.0, 0.8, 0.0));
        assert_abs_diff_eq!(out.y, 1.2, epsilon = 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-3.0 * PI / 2.0), PI / 2.0, epsilon = 1e-12);
        assert!(wrap_angle(-1e-18) < PI);
    }

    proptest! {
        #[test]
        fn wrap_stays_in_range(a in -100.0f64..100.0) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9
                || (1.0 - ((a - w) / (2.0 * PI)).fract().abs()) < 1e-9);
        }

        #[test]
        fn placement_scales_distances_exactly(
            theta in -PI..PI, s in 0.2f64..3.0, tx in -5.0f64..5.0, tz in -5.0f64..5.0,
            pts in proptest::collection::vec((-1.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0), 2..6),
        ) {
            let kp: Vec<_> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
            let out = place_keypoints(&kp, &PlacementParams::new(Vector2::new(tx, tz), theta, s, vec![]));
            for i in 0..kp.len() {
                for j in 0..kp.len() {
                    let d0 = (kp[i] - kp[j]).norm();
                    let d1 = (out[i] - out[j]).norm();
                    prop_assert!((d1 - s * d0).abs() < 1e-9);
                }
            }
        }
    }
}
