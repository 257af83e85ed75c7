//! Procedural chair keypoint database.
//!
//! Keypoint order: leg tips front-left, front-right, back-left,
//! back-right; seat-level back corners left, right; back-top corners left,
//! right. The front faces `-z` and left is `-x`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::template::{build_template, KeypointSet, TemplateModel};

pub const DEFAULT_MODELS: usize = 40;

/// Keypoints of a chair with the given dimensions in meters.
pub fn chair_keypoints(
    seat_width: f64,
    seat_depth: f64,
    seat_height: f64,
    back_height: f64,
    back_tilt: f64,
    leg_splay: f64,
) -> Vec<Vector3<f64>> {
    let (hw, hd) = (seat_width / 2.0, seat_depth / 2.0);
    let (lw, ld) = (hw + leg_splay, hd + leg_splay);
    let top = seat_height + back_height;
    vec![
        Vector3::new(-lw, 0.0, -ld),
        Vector3::new(lw, 0.0, -ld),
        Vector3::new(-lw, 0.0, ld),
        Vector3::new(lw, 0.0, ld),
        Vector3::new(-hw, seat_height, hd),
        Vector3::new(hw, seat_height, hd),
        Vector3::new(-hw, top, hd + back_tilt),
        Vector3::new(hw, top, hd + back_tilt),
    ]
}

/// `n` random chairs with ids `chair-000`, `chair-001`, ...
pub fn chair_database(n: usize, seed: u64) -> Vec<KeypointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kp = chair_keypoints(
                rng.random_range(0.40..0.56),
                rng.random_range(0.40..0.54),
                rng.random_range(0.40..0.50),
                rng.random_range(0.32..0.50),
                rng.random_range(0.0..0.10),
                rng.random_range(0.0..0.04),
            );
            KeypointSet::new(format!("chair-{i:03}"), kp)
        })
        .collect()
}

/// PCA template over a random chair database.
pub fn default_template(n_models: usize, seed: u64) -> Result<TemplateModel> {
    build_template(&chair_database(n_models, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn database_is_canonical_and_deterministic() {
        let a = chair_database(10, 4);
        assert_eq!(a, chair_database(10, 4));
        for set in &a {
            assert_eq!(set.keypoints.len(), 8);
            let min_y = set
                .keypoints
                .iter()
                .map(|k| k.y)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(min_y, 0.0);
            // front legs toward -z, left legs toward -x
            assert!(set.keypoints[0].z < 0.0 && set.keypoints[0].x < 0.0);
            assert!(set.keypoints[6].y > set.keypoints[4].y);
        }
        let t = default_template(40, 1).unwrap();
        assert!(t.modes() >= 1 && t.modes() < 24);
        assert!(t.variance_fraction() > 0.85);
    }
}
