//! Choosing which fitted candidates make up the scene.
//!
//! Each candidate is a binary variable. Its unary energy measures how well
//! its rendered keypoint lobes agree with the observed maps; pairwise
//! energies score co-occurrence under the relative-pose mixture, and
//! physically intersecting pairs may never be selected together.

mod infer;
mod solve;

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    obb_intersects, obb_iou_3d, wrap_angle, Camera, OrientedBox, PlacementParams, DEFAULT_SHRINK,
};
use crate::keypoint_maps::{lobe_value, lobe_window, KeypointMapStack};
use crate::scene_stats::{neg_logit_clamped, PairwiseGmm, RelativePose};
use crate::template::TemplateModel;

pub use infer::{
    fit_candidates, infer_from_cache, infer_scene, EstimatedObject, FitCache, Hyper,
    InferenceConfig, SceneEstimate, DUPLICATE_SIGMAS, MAX_SHAPE_DISTANCE,
};
pub use solve::{solve, EXACT_LIMIT};

/// Candidates closer than this IoU and azimuth gap are merged.
pub const DEDUPE_IOU: f64 = 0.7;
pub const DEDUPE_AZIMUTH: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// A fitted placement awaiting selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub params: PlacementParams,
    /// Mean squared map residual of the refinement.
    pub fit_residual: f64,
    pub unary: f64,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    /// Keypoints in map coordinates.
    pub projected: Vec<Vector2<f64>>,
}

impl Candidate {
    /// Projects the placed template, builds its box and scores it against
    /// the maps. Fails if any keypoint is behind the camera or nothing of
    /// the rendered lobes lands on the grid.
    pub fn new(
        params: PlacementParams,
        fit_residual: f64,
        template: &TemplateModel,
        camera: &Camera,
        maps: &KeypointMapStack,
        alpha: f64,
    ) -> Result<Self> {
        let local = template.instantiate(&params.deform);
        let projected = local
            .iter()
            .map(|k| camera.project(&params.apply(k)))
            .collect::<Result<Vec<_>>>()?;
        let unary = unary_energy(&projected, maps, alpha)?;
        Ok(Self {
            bbox: OrientedBox::from_keypoints(&local, &params),
            params,
            fit_residual,
            unary,
            projected,
        })
    }
}

/// Agreement `|n . m|_F / |n . n|_F` between lobes rendered at the
/// candidate's projected keypoints (`n`) and the observed maps (`m`), with
/// `.` the elementwise product. Only cells inside `n`'s support contribute.
pub fn unary_score(projected: &[Vector2<f64>], maps: &KeypointMapStack) -> Result<f64> {
    let sigma = maps.sigma();
    let (w, h) = (maps.width(), maps.height());
    let (mut num, mut den) = (0.0, 0.0);
    for (c, p) in projected.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = lobe_window(p, sigma, w, h) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                // same precision as a rendered map
                let n = lobe_value(p, sigma, x, y) as f32 as f64;
                let m = maps.get(c, x, y) as f64;
                num += (n * m) * (n * m);
                den += (n * n) * (n * n);
            }
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroSupport);
    }
    Ok((num / den).sqrt())
}

/// `-logit(clamp(u^alpha))` of [`unary_score`].
pub fn unary_energy(
    projected: &[Vector2<f64>],
    maps: &KeypointMapStack,
    alpha: f64,
) -> Result<f64> {
    Ok(neg_logit_clamped(unary_score(projected, maps)?.powf(alpha)))
}

/// Binary labeling problem over the free candidates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionProblem {
    pub unary: Vec<f64>,
    /// Energies for co-selected pairs `(i, j)` with `i < j`.
    pub pairwise: BTreeMap<(usize, usize), f64>,
    /// Pairs `(i, j)`, `i < j`, that may not both be selected.
    pub forbidden: Vec<(usize, usize)>,
}

impl SelectionProblem {
    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    /// Energy of a labeling given by sorted selected indices: unaries in
    /// index order, then pairwise terms in key order. Infinite when a
    /// forbidden pair is selected.
    pub fn energy(&self, selected: &[usize]) -> f64 {
        let mut on = vec![false; self.len()];
        for &i in selected {
            on[i] = true;
        }
        if self.forbidden.iter().any(|&(i, j)| on[i] && on[j]) {
            return f64::INFINITY;
        }
        let mut e = 0.0;
        for (i, u) in self.unary.iter().enumerate() {
            if on[i] {
                e += u;
            }
        }
        for (&(i, j), p) in &self.pairwise {
            if on[i] && on[j] {
                e += p;
            }
        }
        e
    }

    pub(crate) fn dense_pairwise(&self) -> Vec<f64> {
        let n = self.len();
        let mut d = vec![0.0; n * n];
        for (&(i, j), &p) in &self.pairwise {
            d[i * n + j] = p;
            d[j * n + i] = p;
        }
        d
    }

    pub(crate) fn dense_forbidden(&self) -> Vec<bool> {
        let n = self.len();
        let mut d = vec![false; n * n];
        for &(i, j) in &self.forbidden {
            d[i * n + j] = true;
            d[j * n + i] = true;
        }
        d
    }
}

/// Builds the labeling problem for `candidates` given already fixed
/// objects. Pairwise and fixed-object terms only apply within the mixture
/// radius and only when a mixture is given. Candidates must already exclude
/// anything intersecting a fixed object.
pub fn build_problem(
    candidates: &[Candidate],
    fixed: &[PlacementParams],
    gmm: Option<&PairwiseGmm>,
    beta: f64,
) -> SelectionProblem {
    let n = candidates.len();
    let mut unary: Vec<f64> = candidates.iter().map(|c| c.unary).collect();
    let mut pairwise = BTreeMap::new();
    let mut forbidden = Vec::new();
    if let Some(g) = gmm {
        for (u, c) in unary.iter_mut().zip(candidates) {
            for f in fixed {
                if (f.translation - c.params.translation).norm() <= g.delta_r() {
                    *u += g.pair_energy(&RelativePose::between(f, &c.params), beta);
                }
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&candidates[i], &candidates[j]);
            if obb_intersects(&a.bbox, &b.bbox, DEFAULT_SHRINK) {
                forbidden.push((i, j));
                continue;
            }
            if let Some(g) = gmm {
                if (a.params.translation - b.params.translation).norm() <= g.delta_r() {
                    pairwise.insert(
                        (i, j),
                        g.pair_energy(&RelativePose::between(&a.params, &b.params), beta),
                    );
                }
            }
        }
    }
    SelectionProblem {
        unary,
        pairwise,
        forbidden,
    }
}

/// Mean distance between corresponding keypoints.
pub fn mean_distance(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len().max(1) as f64
}

/// Merges near-duplicate candidates, keeping the lower fit residual (lower
/// index on ties). Two candidates are duplicates when their boxes overlap
/// with similar azimuth, or when their projected keypoints lie less than
/// `keypoint_gap` map cells apart on average. Output keeps the input order
/// of the survivors.
pub fn dedupe(candidates: Vec<Candidate>, keypoint_gap: f64) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[a]
            .fit_residual
            .total_cmp(&candidates[b].fit_residual)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let c = &candidates[i];
        let duplicate = kept.iter().any(|&k| {
            let o = &candidates[k];
            (wrap_angle(c.params.azimuth - o.params.azimuth).abs() < DEDUPE_AZIMUTH
                && obb_iou_3d(&c.bbox, &o.bbox) > DEDUPE_IOU)
                || mean_distance(&c.projected, &o.projected) < keypoint_gap
        });
        if !duplicate {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let mut keep = vec![false; candidates.len()];
    for k in kept {
        keep[k] = true;
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}
