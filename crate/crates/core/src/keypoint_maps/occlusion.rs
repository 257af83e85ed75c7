//! Simulated occlusion by dropping projected keypoints before rendering.

use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Projected keypoints of one object, indexed by type. `None` marks a
/// keypoint that is missing from the maps.
pub type ObjectKeypoints = Vec<Option<Vector2<f64>>>;

/// Number of keypoints dropped out of `n` for a drop fraction.
pub fn drop_count(n: usize, drop_fraction: f64) -> usize {
    ((drop_fraction * n as f64) - 1e-9)
        .ceil()
        .clamp(0.0, n as f64) as usize
}

/// Drops `ceil(f * N_k)` uniformly chosen keypoints from every object.
pub fn occlude(objects: &[ObjectKeypoints], drop_fraction: f64, seed: u64) -> Vec<ObjectKeypoints> {
    occlude_objects(objects, &vec![drop_fraction; objects.len()], seed)
}

/// Like [`occlude`] with a separate drop fraction per object.
pub fn occlude_objects(
    objects: &[ObjectKeypoints],
    drop_fractions: &[f64],
    seed: u64,
) -> Vec<ObjectKeypoints> {
    assert_eq!(objects.len(), drop_fractions.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    objects
        .iter()
        .zip(drop_fractions)
        .map(|(obj, &f)| {
            assert!((0.0..=1.0).contains(&f), "drop fraction must lie in [0, 1]");
            let mut out = obj.clone();
            let k = drop_count(obj.len(), f);
            for i in sample(&mut rng, obj.len(), k) {
                out[i] = None;
            }
            out
        })
        .collect()
}

/// Regroups per-object keypoints into per-type location lists.
pub fn per_type_locations(objects: &[ObjectKeypoints], num_types: usize) -> Vec<Vec<Vector2<f64>>> {
    let mut out = vec![Vec::new(); num_types];
    for obj in objects {
        for (t, kp) in obj.iter().enumerate() {
            if let Some(p) = kp {
                out[t].push(*p);
            }
        }
    }
    out
}
