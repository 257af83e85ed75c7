//! Scene-level evaluation measures.
//!
//! Every measure matches each source object to the target object of
//! maximal IoU. Scoring the result against ground truth gives precision and
//! the reverse direction gives recall.

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::{obb_iou_3d, wrap_angle, Camera, OrientedBox};

pub const DEFAULT_TAU_J: f64 = 0.25;
pub const DEFAULT_TAU_THETA_DEG: f64 = 15.0;
/// Occlusion histogram bin lower edges.
pub const DEFAULT_OCCLUSION_BINS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalObject {
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub azimuth: f64,
}

impl EvalObject {
    pub fn new(bbox: OrientedBox) -> Self {
        Self {
            azimuth: bbox.azimuth,
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScene {
    pub objects: Vec<EvalObject>,
    pub camera: Camera,
    /// Boxes that block view rays but are never scored.
    #[serde(default)]
    pub occluders: Vec<OrientedBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouSpace {
    ThreeD,
    TwoD,
}

/// Image-plane bounding rectangle of the projected box corners, in map
/// coordinates. Corners behind the camera are ignored.
pub fn projected_rect(bbox: &OrientedBox, camera: &Camera) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let pts: Vec<Vector2<f64>> = bbox
        .corners()
        .iter()
        .filter_map(|c| camera.project(c).ok())
        .collect();
    if pts.is_empty() {
        return None;
    }
    let lo = pts
        .iter()
        .fold(Vector2::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = pts
        .iter()
        .fold(Vector2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    Some((lo, hi))
}

pub fn rect_iou(a: &(Vector2<f64>, Vector2<f64>), b: &(Vector2<f64>, Vector2<f64>)) -> f64 {
    let area =
        |lo: &Vector2<f64>, hi: &Vector2<f64>| ((hi.x - lo.x).max(0.0)) * ((hi.y - lo.y).max(0.0));
    let lo = a.0.sup(&b.0);
    let hi = a.1.inf(&b.1);
    let inter = area(&lo, &hi);
    let union = area(&a.0, &a.1) + area(&b.0, &b.1) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn pair_iou(
    a: &EvalObject,
    a_cam: &Camera,
    b: &EvalObject,
    b_cam: &Camera,
    space: IouSpace,
) -> f64 {
    match space {
        IouSpace::ThreeD => obb_iou_3d(&a.bbox, &b.bbox),
        IouSpace::TwoD => match (
            projected_rect(&a.bbox, a_cam),
            projected_rect(&b.bbox, b_cam),
        ) {
            (Some(ra), Some(rb)) => rect_iou(&ra, &rb),
            _ => 0.0,
        },
    }
}

/// Target object of maximal IoU with `o` (first index on ties). Returns no
/// index and IoU 0 for an empty target.
pub fn max_iou_correspondence(
    o: &EvalObject,
    o_camera: &Camera,
    target: &EvalScene,
    space: IouSpace,
) -> (Option<usize>, f64) {
    let mut best = (None, 0.0);
    for (i, t) in target.objects.iter().enumerate() {
        let v = pair_iou(o, o_camera, t, &target.camera, space);
        if best.0.is_none() || v > best.1 {
            best = (Some(i), v);
        }
    }
    best
}

/// Absolute azimuth gap in degrees within `[0, 180]`, folded by the
/// rotational symmetry order of the object class.
pub fn angle_difference_deg(a: f64, b: f64, symmetry_order: u32) -> f64 {
    let period = 2.0 * PI / symmetry_order.max(1) as f64;
    let d = wrap_angle(a - b).abs();
    let folded = d % period;
    folded.min(period - folded).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_j: f64,
    pub tau_theta_deg: f64,
    pub symmetry_order: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_j: DEFAULT_TAU_J,
            tau_theta_deg: DEFAULT_TAU_THETA_DEG,
            symmetry_order: 1,
        }
    }
}

/// Per-source-object match facts in one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Match {
    iou3d: f64,
    iou2d: f64,
    angle_deg: Option<f64>,
}

fn matches(source: &EvalScene, target: &EvalScene, symmetry: u32) -> Vec<Match> {
    source
        .objects
        .iter()
        .map(|o| {
            let (best, iou3d) = max_iou_correspondence(o, &source.camera, target, IouSpace::ThreeD);
            let (_, iou2d) = max_iou_correspondence(o, &source.camera, target, IouSpace::TwoD);
            Match {
                iou3d,
                iou2d,
                angle_deg: best
                    .map(|i| angle_difference_deg(o.azimuth, target.objects[i].azimuth, symmetry)),
            }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean MaxIoU of source objects; `None` for an empty source.
pub fn iou_measure(source: &EvalScene, target: &EvalScene, space: IouSpace) -> Option<f64> {
    mean(
        source
            .objects
            .iter()
            .map(|o| max_iou_correspondence(o, &source.camera, target, space).1),
    )
}

/// Fraction of source objects whose MaxIoU exceeds `tau_j`.
pub fn loc_measure(source: &EvalScene, target: &EvalScene, tau_j: f64) -> Option<f64> {
    mean(
        matches(source, target, 1)
            .iter()
            .map(|m| f64::from(u8::from(m.iou3d > tau_j))),
    )
}

/// Like [`loc_measure`], also requiring an azimuth gap below `tau_theta_deg`.
pub fn locang_measure(
    source: &EvalScene,
    target: &EvalScene,
    tau_j: f64,
    tau_theta_deg: f64,
    symmetry_order: u32,
) -> Option<f64> {
    mean(
        matches(source, target, symmetry_order)
            .iter()
            .map(|m| f64::from(u8::from(correct_locang(m, tau_j, tau_theta_deg)))),
    )
}

/// Mean azimuth gap over correctly located source objects, in degrees.
pub fn angdiff(
    source: &EvalScene,
    target: &EvalScene,
    tau_j: f64,
    symmetry_order: u32,
) -> Option<f64> {
    mean(
        matches(source, target, symmetry_order)
            .iter()
            .filter(|m| m.iou3d > tau_j)
            .filter_map(|m| m.angle_deg),
    )
}

fn correct_locang(m: &Match, tau_j: f64, tau_theta_deg: f64) -> bool {
    m.iou3d > tau_j && m.angle_deg.is_some_and(|a| a < tau_theta_deg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: Option<f64>, recall: Option<f64>) -> Self {
        let (p, r) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
        let f1 = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub iou3d: Prf,
    pub iou2d: Prf,
    pub loc: Prf,
    pub locang: Prf,
    pub angdiff_degrees: Option<f64>,
    pub tau_j: f64,
    pub tau_theta: f64,
}

/// Sums from which measures are pooled over many scenes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub result_objects: usize,
    pub gt_objects: usize,
    pub iou3d: [f64; 2],
    pub iou2d: [f64; 2],
    pub loc: [usize; 2],
    pub locang: [usize; 2],
    pub angdiff_sum: f64,
    pub angdiff_count: usize,
}

impl Tally {
    /// Counts for one result scene against its ground truth.
    pub fn of(result: &EvalScene, gt: &EvalScene, th: &Thresholds) -> Self {
        let mut t = Tally {
            result_objects: result.objects.len(),
            gt_objects: gt.objects.len(),
            ..Tally::default()
        };
        for (side, (s, g)) in [(result, gt), (gt, result)].into_iter().enumerate() {
            for m in matches(s, g, th.symmetry_order) {
                t.iou3d[side] += m.iou3d;
                t.iou2d[side] += m.iou2d;
                if m.iou3d > th.tau_j {
                    t.loc[side] += 1;
                    if side == 0 {
                        if let Some(a) = m.angle_deg {
                            t.angdiff_sum += a;
                            t.angdiff_count += 1;
                        }
                    }
                }
                if correct_locang(&m, th.tau_j, th.tau_theta_deg) {
                    t.locang[side] += 1;
                }
            }
        }
        t
    }

    pub fn merge(&mut self, other: &Tally) {
        self.result_objects += other.result_objects;
        self.gt_objects += other.gt_objects;
        for i in 0..2 {
            self.iou3d[i] += other.iou3d[i];
            self.iou2d[i] += other.iou2d[i];
            self.loc[i] += other.loc[i];
            self.locang[i] += other.locang[i];
        }
        self.angdiff_sum += other.angdiff_sum;
        self.angdiff_count += other.angdiff_count;
    }

    pub fn report(&self, th: &Thresholds) -> MeasureReport {
        let ratio = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
        let prf = |v: [f64; 2]| {
            Prf::new(
                ratio(v[0], self.result_objects),
                ratio(v[1], self.gt_objects),
            )
        };
        let count = |v: [usize; 2]| [v[0] as f64, v[1] as f64];
        MeasureReport {
            iou3d: prf(self.iou3d),
            iou2d: prf(self.iou2d),
            loc: prf(count(self.loc)),
            locang: prf(count(self.locang)),
            angdiff_degrees: ratio(self.angdiff_sum, self.angdiff_count),
            tau_j: th.tau_j,
            tau_theta: th.tau_theta_deg,
        }
    }
}

/// All measures for one result scene against its ground truth.
pub fn evaluate(result: &EvalScene, gt: &EvalScene, th: &Thresholds) -> MeasureReport {
    Tally::of(result, gt, th).report(th)
}

/// Measures pooled over many `(result, gt)` scene pairs.
pub fn evaluate_pooled(pairs: &[(EvalScene, EvalScene)], th: &Thresholds) -> MeasureReport {
    let mut total = Tally::default();
    for (r, g) in pairs {
        total.merge(&Tally::of(r, g, th));
    }
    total.report(th)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau_j: f64,
    pub tau_theta: f64,
    pub locang_f1: f64,
}

/// Pooled LocAng F1 over a grid of thresholds.
pub fn threshold_sweep(
    pairs: &[(EvalScene, EvalScene)],
    tau_js: &[f64],
    tau_thetas_deg: &[f64],
    symmetry_order: u32,
) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for &tau_j in tau_js {
        for &tau_theta in tau_thetas_deg {
            let th = Thresholds {
                tau_j,
                tau_theta_deg: tau_theta,
                symmetry_order,
            };
            out.push(SweepPoint {
                tau_j,
                tau_theta,
                locang_f1: evaluate_pooled(pairs, &th).locang.f1,
            });
        }
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("tau_j,tau_theta,locang_f1\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.tau_j, p.tau_theta, p.locang_f1));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub per_object: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub histogram: Vec<usize>,
}

/// Occlusion of every object from `n x n` view rays through the image.
///
/// An object's visibility is the share of the rays hitting it on which it
/// is the nearest hit; occlusion is one minus that, and 1 for objects no
/// ray reaches. Occluder boxes block rays but are not scored.
pub fn occlusion_score(scene: &EvalScene, n: usize, bin_edges: &[f64]) -> OcclusionReport {
    assert!(n >= 1, "grid must have at least one ray");
    let cam = &scene.camera;
    let (mw, mh) = cam.map_size();
    let origin = *cam.position();
    let k = scene.objects.len();
    let mut hits = vec![0usize; k];
    let mut nearest = vec![0usize; k];
    for gy in 0..n {
        for gx in 0..n {
            let p = Vector2::new(
                (gx as f64 + 0.5) / n as f64 * mw as f64,
                (gy as f64 + 0.5) / n as f64 * mh as f64,
            );
            let dir = cam.ray_direction(&p);
            let mut best: Option<(f64, Option<usize>)> = None;
            for (i, o) in scene.objects.iter().enumerate() {
                if let Some(t) = o.bbox.ray_entry(&origin, &dir) {
                    hits[i] += 1;
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, Some(i)));
                    }
                }
            }
            for b in &scene.occluders {
                if let Some(t) = b.ray_entry(&origin, &dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, None));
                    }
                }
            }
            if let Some((_, Some(i))) = best {
                nearest[i] += 1;
            }
        }
    }
    let per_object: Vec<f64> = hits
        .iter()
        .zip(&nearest)
        .map(|(&h, &v)| {
            if h == 0 {
                1.0
            } else {
                1.0 - v as f64 / h as f64
            }
        })
        .collect();
    OcclusionReport {
        histogram: histogram(&per_object, bin_edges),
        bin_edges: bin_edges.to_vec(),
        per_object,
    }
}

/// Bin index of `v` given ascending lower edges: the last edge not above it.
pub fn bin_index(v: f64, lower_edges: &[f64]) -> usize {
    lower_edges.iter().rposition(|&e| v >= e).unwrap_or(0)
}

pub fn histogram(values: &[f64], lower_edges: &[f64]) -> Vec<usize> {
    let mut h = vec![0; lower_edges.len()];
    if h.is_empty() {
        return h;
    }
    for &v in values {
        h[bin_index(v, lower_edges)] += 1;
    }
    h
}
