//! Synthetic ground-truth arrangements and their keypoint maps.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{obb_intersects, rotate_ground, Camera, OrientedBox, PlacementParams};
use crate::io::{SceneFile, SceneObject};
use crate::keypoint_maps::{
    occlude_objects, per_type_locations, render_maps, KeypointMapStack, ObjectKeypoints,
};
use crate::template::TemplateModel;

/// Pitch of the default camera.
pub const DEFAULT_PITCH_DEG: f64 = 15.0;
pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (512, 512);
/// Map grid of the default camera.
pub const DEFAULT_MAP_SIZE: (u32, u32) = (128, 128);
/// Half-extents of the ring layout's table.
pub const TABLE_HALF_EXTENTS: [f64; 3] = [0.4, 0.375, 0.4];

const MAX_ATTEMPTS: usize = 1000;
const JITTER_ROUNDS: usize = 8;
/// Keypoints must project at least this many cells inside the map.
const FRUSTUM_MARGIN: f64 = 1.0;

/// Eye-height camera with a 60 degree horizontal field of view.
pub fn default_camera(map_size: (u32, u32)) -> Camera {
    let f = DEFAULT_IMAGE_SIZE.0 as f64 / 2.0 / (30f64.to_radians()).tan();
    Camera::pitched(
        DEFAULT_PITCH_DEG.to_radians(),
        f,
        DEFAULT_IMAGE_SIZE,
        map_size,
    )
    .expect("default camera parameters are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Row,
    FacingPairs,
    RingAroundTable,
    RandomScatter,
}

impl Layout {
    pub const ALL: [Layout; 4] = [
        Layout::Row,
        Layout::FacingPairs,
        Layout::RingAroundTable,
        Layout::RandomScatter,
    ];

    /// Typical spacing in meters: neighbour distance for rows and pairs,
    /// chair-to-table-center radius for rings.
    pub fn default_spacing(self) -> f64 {
        match self {
            Layout::Row => 0.75,
            Layout::FacingPairs => 1.0,
            Layout::RingAroundTable => 0.85,
            Layout::RandomScatter => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementSpec {
    pub layout: Layout,
    pub count_min: usize,
    pub count_max: usize,
    pub spacing: f64,
    /// Uniform jitter half-width on spacings, meters.
    pub spacing_jitter: f64,
    /// Uniform jitter half-width on azimuths, radians.
    pub azimuth_jitter: f64,
    /// Deformation weights are drawn with standard deviation
    /// `sqrt(eigenvalue) * deform_shrink` per mode.
    pub deform_shrink: f64,
    pub seed: u64,
}

impl ArrangementSpec {
    pub fn new(layout: Layout, count_min: usize, count_max: usize, seed: u64) -> Self {
        Self {
            layout,
            count_min,
            count_max,
            spacing: layout.default_spacing(),
            spacing_jitter: 0.05,
            azimuth_jitter: 5f64.to_radians(),
            deform_shrink: 0.5,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count_min == 0 || self.count_min > self.count_max {
            return Err(Error::InvalidInput("object count range is empty".into()));
        }
        if !(self.spacing > 0.0) || self.spacing_jitter < 0.0 || self.azimuth_jitter < 0.0 {
            return Err(Error::InvalidInput(
                "spacing must be positive and jitters non-negative".into(),
            ));
        }
        if self.layout == Layout::RingAroundTable && self.count_max > 6 {
            return Err(Error::InvalidInput("a table seats at most 6 chairs".into()));
        }
        Ok(())
    }
}

const SCATTER_TRIES: usize = 50;

fn jitter(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

fn table_box(center: Vector2<f64>, azimuth: f64) -> OrientedBox {
    OrientedBox::new(
        Vector3::new(center.x, TABLE_HALF_EXTENTS[1], center.y),
        Vector3::from(TABLE_HALF_EXTENTS),
        azimuth,
    )
}

/// Ground poses for one attempt.
fn sample_poses(
    spec: &ArrangementSpec,
    count: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<(Vector2<f64>, f64)>, Vec<OrientedBox>) {
    let sj = spec.spacing_jitter * scale;
    let aj = spec.azimuth_jitter * scale;
    let mut poses = Vec::with_capacity(count);
    let mut occluders = Vec::new();
    match spec.layout {
        Layout::Row => {
            let center = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(3.0..5.5));
            let base = rng.random_range(-PI / 6.0..PI / 6.0);
            for i in 0..count {
                let offset =
                    (i as f64 - (count as f64 - 1.0) / 2.0) * spec.spacing + jitter(rng, sj);
                poses.push((center + Vector2::new(offset, 0.0), base + jitter(rng, aj)));
            }
        }
        Layout::FacingPairs => {
            let base = rng.random_range(-PI..PI);
            let center = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(3.0..5.0));
            let pairs = count.div_ceil(2);
            let gap = spec.spacing.max(1.0) + 0.6;
            for k in 0..pairs {
                let c = center
                    + rotate_ground(
                        base,
                        &Vector2::new((k as f64 - (pairs as f64 - 1.0) / 2.0) * gap, 0.0),
                    );
                let half = (spec.spacing + jitter(rng, sj)) / 2.0;
                poses.push((
                    c + rotate_ground(base, &Vector2::new(0.0, half)),
                    base + jitter(rng, aj),
                ));
                if poses.len() < count {
                    poses.push((
                        c + rotate_ground(base, &Vector2::new(0.0, -half)),
                        base + PI + jitter(rng, aj),
                    ));
                }
            }
        }
        Layout::RingAroundTable => {
            let center = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(3.5..5.0));
            let phase = rng.random_range(-PI..PI);
            occluders.push(table_box(center, phase));
            for i in 0..count {
                let phi = phase + 2.0 * PI * i as f64 / count as f64 + jitter(rng, aj);
                let r = spec.spacing + jitter(rng, sj);
                let p = center + Vector2::new(r * phi.sin(), r * phi.cos());
                poses.push((p, phi + jitter(rng, aj)));
            }
        }
        Layout::RandomScatter => {
            // spacing is the minimum center distance here
            let min_gap = spec.spacing - sj;
            for _ in 0..count {
                let mut t = Vector2::zeros();
                for _ in 0..SCATTER_TRIES {
                    let z = rng.random_range(2.5..6.0);
                    t = Vector2::new(rng.random_range(-0.4..0.4) * z, z);
                    if poses
                        .iter()
                        .all(|(p, _): &(Vector2<f64>, f64)| (p - t).norm() >= min_gap)
                    {
                        break;
                    }
                }
                poses.push((t, rng.random_range(-PI..PI)));
            }
        }
    }
    (poses, occluders)
}

fn in_frustum(obj: &SceneObject, template: &TemplateModel, camera: &Camera) -> bool {
    let (w, h) = camera.map_size();
    template.instantiate(&obj.params.deform).iter().all(|k| {
        camera.project(&obj.params.apply(k)).is_ok_and(|p| {
            p.x >= FRUSTUM_MARGIN
                && p.y >= FRUSTUM_MARGIN
                && p.x <= w as f64 - FRUSTUM_MARGIN
                && p.y <= h as f64 - FRUSTUM_MARGIN
        })
    })
}

/// True when no two objects, or object and occluder, intersect and every
/// object projects inside the map.
pub fn validate_scene(scene: &SceneFile, template: &TemplateModel) -> bool {
    let objs = &scene.objects;
    for (i, a) in objs.iter().enumerate() {
        if !in_frustum(a, template, &scene.camera) {
            return false;
        }
        if objs[i + 1..]
            .iter()
            .any(|b| obb_intersects(&a.bbox, &b.bbox, 1.0))
        {
            return false;
        }
        if scene
            .occluders
            .iter()
            .any(|o| obb_intersects(&a.bbox, o, 1.0))
        {
            return false;
        }
    }
    true
}

/// Deterministic list of `n` ground-truth scenes seen by `camera`.
///
/// Each scene is drawn by rejection sampling; after repeated failures the
/// spacing and azimuth jitter are halved and sampling continues.
pub fn generate_scenes(
    spec: &ArrangementSpec,
    template: &TemplateModel,
    camera: &Camera,
    n: usize,
) -> Result<Vec<SceneFile>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("scene count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stds: Vec<f64> = template
        .eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt() * spec.deform_shrink)
        .collect();
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        let count = rng.random_range(spec.count_min..=spec.count_max);
        scenes.push(generate_one(
            spec, template, camera, count, &stds, &mut rng,
        )?);
    }
    Ok(scenes)
}

fn generate_one(
    spec: &ArrangementSpec,
    template: &TemplateModel,
    camera: &Camera,
    count: usize,
    stds: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<SceneFile> {
    let mut scale = 1.0;
    for _ in 0..JITTER_ROUNDS {
        for _ in 0..MAX_ATTEMPTS {
            let (poses, occluders) = sample_poses(spec, count, scale, rng);
            let objects = poses
                .into_iter()
                .map(|(t, azimuth)| {
                    let deform = stds
                        .iter()
                        .map(|&s| {
                            if s > 0.0 {
                                Normal::new(0.0, s).unwrap().sample(rng)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    SceneObject::from_template(
                        PlacementParams::new(t, azimuth, 1.0, deform),
                        template,
                    )
                })
                .collect();
            let scene = SceneFile {
                objects,
                camera: camera.clone(),
                iterations_used: 0,
                occluders,
            };
            if validate_scene(&scene, template) {
                return Ok(scene);
            }
        }
        scale *= 0.5;
    }
    Err(Error::InvalidInput(format!(
        "could not place {count} objects for layout {:?}",
        spec.layout
    )))
}

/// Projected keypoints of every object in a scene.
pub fn project_scene(scene: &SceneFile, template: &TemplateModel) -> Result<Vec<ObjectKeypoints>> {
    scene
        .objects
        .iter()
        .map(|o| {
            template
                .instantiate(&o.params.deform)
                .iter()
                .map(|k| scene.camera.project(&o.params.apply(k)).map(Some))
                .collect()
        })
        .collect()
}

/// Renders a scene's maps after dropping a fraction of each object's
/// keypoints (one fraction per object).
pub fn render_scene(
    scene: &SceneFile,
    template: &TemplateModel,
    sigma: f64,
    drop_fractions: &[f64],
    seed: u64,
) -> Result<KeypointMapStack> {
    if drop_fractions.len() != scene.objects.len() {
        return Err(Error::InvalidInput(
            "need one drop fraction per object".into(),
        ));
    }
    if drop_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidInput(
            "drop fractions must lie in [0, 1]".into(),
        ));
    }
    let projected = project_scene(scene, template)?;
    let kept = occlude_objects(&projected, drop_fractions, seed);
    let (w, h) = scene.camera.map_size();
    Ok(render_maps(
        &per_type_locations(&kept, template.num_keypoints()),
        sigma,
        w as usize,
        h as usize,
    ))
}
