//! The iterative fit-and-select loop.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{build_problem, dedupe, mean_distance, solve, Candidate};
use crate::error::{Error, Result};
use crate::fitting::{fit_initial, fit_refine, propose_pairs, FitProblem, FitResult, ScenePrior};
use crate::geometry::{obb_intersects, Camera, OrientedBox, PlacementParams, DEFAULT_SHRINK};
use crate::keypoint_maps::{extract_locations, KeypointMapStack};
use crate::scene_stats::PairwiseGmm;
use crate::template::TemplateModel;

/// Fits deformed further than this from the mean shape, in standard
/// deviations, are implausible and never become candidates.
pub const MAX_SHAPE_DISTANCE: f64 = 3.0;

/// Candidates whose keypoints lie within this many lobe widths of another's,
/// on average, explain the same evidence at another depth and scale.
pub const DUPLICATE_SIGMAS: f64 = 1.5;

/// Detection, acceptance and energy-shaping thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Minimum map value of a detected keypoint.
    pub tau_m: f64,
    /// Maximum mean squared map residual of an accepted fit.
    pub tau_u: f64,
    /// Exponent on the unary agreement score.
    pub alpha: f64,
    /// Exponent on pairwise densities.
    pub beta: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            tau_m: 0.25,
            tau_u: 0.21,
            alpha: 0.61,
            beta: 0.14,
        }
    }
}

impl Hyper {
    /// Settings for scenes where most of an object's keypoints are missing.
    /// Fits may leave up to 80% of their lobes unexplained, and the steeper
    /// unary makes such weak candidates depend on pairwise support.
    pub fn heavy_occlusion() -> Self {
        Self {
            tau_u: 0.8,
            alpha: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.tau_m)
            && self.tau_m < 1.0
            && ok(self.tau_u)
            && ok(self.alpha)
            && ok(self.beta))
        {
            return Err(Error::InvalidInput(format!(
                "invalid hyperparameters {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub hyper: Hyper,
    pub max_iterations: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Use pairwise co-occurrence energies and the fitting prior.
    pub use_pairwise: bool,
    /// Keep the LM steps of every map refinement.
    pub record_trace: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            hyper: Hyper::default(),
            max_iterations: 4,
            alpha1: crate::fitting::DEFAULT_ALPHA1,
            alpha2: crate::fitting::DEFAULT_ALPHA2,
            use_pairwise: true,
            record_trace: false,
        }
    }
}

impl InferenceConfig {
    /// Pairwise terms and the scene prior disabled.
    pub fn without_pairwise(mut self) -> Self {
        self.use_pairwise = false;
        self
    }

    /// Only the first selection round.
    pub fn single_iteration(mut self) -> Self {
        self.max_iterations = 1;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatedObject {
    pub params: PlacementParams,
    pub model_id: Option<String>,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    /// Iteration (from 1) in which the object was selected.
    pub iteration: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SceneEstimate {
    pub objects: Vec<EstimatedObject>,
    pub iterations_used: usize,
}

/// Stage-one pair fits and their prior-free refinements. Neither depends on
/// the mixture or on earlier selections, so ablations can share them.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCache {
    pub inits: Vec<PlacementParams>,
    pub refined: Vec<FitResult>,
}

fn check_inputs(
    maps: &KeypointMapStack,
    template: &TemplateModel,
    config: &InferenceConfig,
) -> Result<()> {
    config.hyper.validate()?;
    if config.max_iterations == 0 {
        return Err(Error::InvalidInput(
            "max_iterations must be at least 1".into(),
        ));
    }
    if maps.channels() != template.num_keypoints() {
        return Err(Error::InvalidInput(format!(
            "{} map channels for a {}-keypoint template",
            maps.channels(),
            template.num_keypoints()
        )));
    }
    Ok(())
}

fn refine_problem<'a>(
    maps: &'a KeypointMapStack,
    camera: &'a Camera,
    template: &'a TemplateModel,
    config: &InferenceConfig,
) -> FitProblem<'a> {
    let mut refine = FitProblem::refine(camera, template, maps);
    refine.alpha1 = config.alpha1;
    refine.alpha2 = config.alpha2;
    refine.lm.record_trace = config.record_trace;
    refine
}

/// Detects keypoints, fits every anchor pair and refines each distinct
/// result against the maps.
pub fn fit_candidates(
    maps: &KeypointMapStack,
    camera: &Camera,
    template: &TemplateModel,
    config: &InferenceConfig,
) -> Result<FitCache> {
    check_inputs(maps, template, config)?;
    let locations = extract_locations(maps, config.hyper.tau_m);
    let pairs = propose_pairs(&locations);
    log::debug!(
        "{} detections, {} anchor pairs",
        locations.total(),
        pairs.len()
    );

    let mut inits: Vec<PlacementParams> = Vec::new();
    for pair in pairs {
        let mut problem = FitProblem::pair(camera, template, pair);
        problem.alpha1 = config.alpha1;
        problem.alpha2 = config.alpha2;
        let fit = fit_initial(&problem)?;
        if fit.residual.is_finite() && !inits.iter().any(|p| same_pose(p, &fit.params)) {
            inits.push(fit.params);
        }
    }
    let refine = refine_problem(maps, camera, template, config);
    let refined = inits
        .iter()
        .map(|init| fit_refine(&refine, init))
        .collect::<Result<_>>()?;
    Ok(FitCache { inits, refined })
}

/// Recovers the scene behind a keypoint-map stack.
///
/// `gmm` is ignored when `config.use_pairwise` is false, so the ablation
/// never touches it.
pub fn infer_scene(
    maps: &KeypointMapStack,
    camera: &Camera,
    template: &TemplateModel,
    gmm: Option<&PairwiseGmm>,
    config: &InferenceConfig,
) -> Result<SceneEstimate> {
    let cache = fit_candidates(maps, camera, template, config)?;
    infer_from_cache(&cache, maps, camera, template, gmm, config)
}

/// The selection loop of [`infer_scene`] on precomputed fits. `cache` must
/// come from [`fit_candidates`] with the same inputs and detection settings.
pub fn infer_from_cache(
    cache: &FitCache,
    maps: &KeypointMapStack,
    camera: &Camera,
    template: &TemplateModel,
    gmm: Option<&PairwiseGmm>,
    config: &InferenceConfig,
) -> Result<SceneEstimate> {
    check_inputs(maps, template, config)?;
    let gmm = gmm.filter(|_| config.use_pairwise);
    let hyper = &config.hyper;
    let refine = refine_problem(maps, camera, template, config);

    let mut estimate = SceneEstimate::default();
    let mut fixed: Vec<PlacementParams> = Vec::new();
    let mut fixed_boxes: Vec<OrientedBox> = Vec::new();
    let mut fixed_points: Vec<Vec<Vector2<f64>>> = Vec::new();
    let duplicate_gap = DUPLICATE_SIGMAS * maps.sigma();
    for iteration in 1..=config.max_iterations {
        estimate.iterations_used = iteration;
        let mut candidates = Vec::new();
        for (init, base) in cache.inits.iter().zip(&cache.refined) {
            let near_fixed = gmm.is_some_and(|g| {
                fixed
                    .iter()
                    .any(|f| (f.translation - init.translation).norm() <= g.delta_r())
            });
            let fit = if near_fixed {
                let prior = gmm.map(|g| ScenePrior {
                    fixed: &fixed,
                    gmm: g,
                });
                fit_refine(&refine.clone().with_prior(prior), init)?
            } else {
                base.clone()
            };
            if !fit.accepted(hyper.tau_u)
                || template.shape_distance(&fit.params.deform) > MAX_SHAPE_DISTANCE
            {
                continue;
            }
            let residual = fit
                .mean_map_residual
                .expect("accepted fits carry a map residual");
            match Candidate::new(fit.params, residual, template, camera, maps, hyper.alpha) {
                Ok(c) => {
                    let clash = fixed_boxes
                        .iter()
                        .any(|b| obb_intersects(b, &c.bbox, DEFAULT_SHRINK))
                        || fixed_points
                            .iter()
                            .any(|p| mean_distance(p, &c.projected) < duplicate_gap);
                    if !clash {
                        candidates.push(c);
                    }
                }
                Err(Error::BehindCamera { .. }) | Err(Error::ZeroSupport) => {}
                Err(e) => return Err(e),
            }
        }
        let candidates = dedupe(candidates, duplicate_gap);
        let problem = build_problem(&candidates, &fixed, gmm, hyper.beta);
        let selected = solve(&problem);
        log::debug!(
            "iteration {iteration}: {} candidates, {} selected",
            candidates.len(),
            selected.len()
        );
        if selected.is_empty() {
            break;
        }
        for i in selected {
            let c = &candidates[i];
            fixed.push(c.params.clone());
            fixed_boxes.push(c.bbox.clone());
            fixed_points.push(c.projected.clone());
            estimate.objects.push(EstimatedObject {
                model_id: template.nearest_model(&c.params.deform).map(str::to_owned),
                params: c.params.clone(),
                bbox: c.bbox.clone(),
                iteration,
            });
        }
    }
    Ok(estimate)
}

impl SceneEstimate {
    /// The estimate a run capped at `iterations` would have produced: the
    /// loop is deterministic and never revisits earlier rounds.
    pub fn truncated(&self, iterations: usize) -> SceneEstimate {
        SceneEstimate {
            objects: self
                .objects
                .iter()
                .filter(|o| o.iteration <= iterations)
                .cloned()
                .collect(),
            iterations_used: self.iterations_used.min(iterations),
        }
    }
}

/// Pair fits landing on numerically the same placement refine identically.
fn same_pose(a: &PlacementParams, b: &PlacementParams) -> bool {
    (a.translation - b.translation).norm() < 1e-6
        && (a.azimuth - b.azimuth).abs() < 1e-6
        && (a.scale - b.scale).abs() < 1e-6
        && a.deform
            .iter()
            .zip(&b.deform)
            .all(|(x, y)| (x - y).abs() < 1e-6)
}
