//! Candidate fitting.
//!
//! Stage one fits the template to a pair of detected keypoints of distinct
//! types by reprojection error. Stage two refines the result against every
//! keypoint map, optionally pulled toward already-placed neighbours by a
//! Max-Mixture prior. Parameters are packed as
//! `[t_x, t_z, azimuth, scale, deform...]`.

mod lm;

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector2, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{rotate_ground, rotate_up, wrap_angle, Camera, PlacementParams};
use crate::keypoint_maps::{KeypointLocations, KeypointMapStack};
use crate::scene_stats::{PairwiseGmm, RelativePose};
use crate::template::TemplateModel;

pub use lm::{lm_minimize, LmOptions, LmOutcome, LmStep};

/// Number of evenly spaced azimuth starts for the pair fit.
pub const AZIMUTH_SEEDS: usize = 8;
pub const DEFAULT_ALPHA1: f64 = 1.0;
pub const DEFAULT_ALPHA2: f64 = 1.0;

const MIN_SCALE: f64 = 1e-3;

/// A detected keypoint used to anchor a pair fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchor {
    pub kind: usize,
    pub position: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorPair {
    pub first: Anchor,
    pub second: Anchor,
}

/// All pairs of detections with distinct types, ordered by type indices and
/// then by coordinates.
pub fn propose_pairs(locations: &KeypointLocations) -> Vec<AnchorPair> {
    let sorted: Vec<Vec<Vector2<f64>>> = locations
        .per_type
        .iter()
        .map(|peaks| {
            let mut v: Vec<_> = peaks.iter().map(|p| p.position).collect();
            v.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
            v
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            for a in &sorted[i] {
                for b in &sorted[j] {
                    out.push(AnchorPair {
                        first: Anchor {
                            kind: i,
                            position: *a,
                        },
                        second: Anchor {
                            kind: j,
                            position: *b,
                        },
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PairInit,
    MapRefine,
}

/// Already-placed objects that pull a refit toward likely relative poses.
#[derive(Debug, Clone, Copy)]
pub struct ScenePrior<'a> {
    pub fixed: &'a [PlacementParams],
    pub gmm: &'a PairwiseGmm,
}

#[derive(Debug, Clone)]
pub struct FitProblem<'a> {
    pub camera: &'a Camera,
    pub template: &'a TemplateModel,
    pub stage: Stage,
    pub anchor_pair: Option<AnchorPair>,
    pub maps: Option<&'a KeypointMapStack>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub prior: Option<ScenePrior<'a>>,
    pub lm: LmOptions,
}

impl<'a> FitProblem<'a> {
    pub fn pair(camera: &'a Camera, template: &'a TemplateModel, pair: AnchorPair) -> Self {
        Self {
            camera,
            template,
            stage: Stage::PairInit,
            anchor_pair: Some(pair),
            maps: None,
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
            prior: None,
            lm: LmOptions::default(),
        }
    }

    pub fn refine(
        camera: &'a Camera,
        template: &'a TemplateModel,
        maps: &'a KeypointMapStack,
    ) -> Self {
        Self {
            camera,
            template,
            stage: Stage::MapRefine,
            anchor_pair: None,
            maps: Some(maps),
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
            prior: None,
            lm: LmOptions::default(),
        }
    }

    pub fn with_prior(mut self, prior: Option<ScenePrior<'a>>) -> Self {
        self.prior = prior;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::InvalidInput(
                "regulariser weights must be non-negative".into(),
            ));
        }
        match self.stage {
            Stage::PairInit => {
                let pair = self
                    .anchor_pair
                    .ok_or_else(|| Error::InvalidInput("pair fit needs an anchor pair".into()))?;
                let n = self.template.num_keypoints();
                if pair.first.kind == pair.second.kind
                    || pair.first.kind >= n
                    || pair.second.kind >= n
                {
                    return Err(Error::InvalidInput(
                        "anchors need two distinct valid types".into(),
                    ));
                }
            }
            Stage::MapRefine => {
                let maps = self
                    .maps
                    .ok_or_else(|| Error::InvalidInput("map refinement needs maps".into()))?;
                if maps.channels() != self.template.num_keypoints() {
                    return Err(Error::InvalidInput(format!(
                        "{} map channels for a {}-keypoint template",
                        maps.channels(),
                        self.template.num_keypoints()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fixed objects within the prior radius of `init`.
    fn active_fixed(&self, init: &PlacementParams) -> Vec<PlacementParams> {
        match &self.prior {
            Some(p) => p
                .fixed
                .iter()
                .filter(|f| (f.translation - init.translation).norm() <= p.gmm.delta_r())
                .cloned()
                .collect(),
            None => Vec::new(),
        }
    }

    /// Residual function for this stage. `active` are the prior objects in
    /// effect; it is ignored unless a prior is set.
    pub fn objective<'b>(&'b self, active: &'b [PlacementParams]) -> Objective<'b> {
        Objective {
            problem: self,
            active: if self.prior.is_some() { active } else { &[] },
        }
    }
}

/// Packs placement parameters into an optimiser vector.
pub fn pack(params: &PlacementParams) -> DVector<f64> {
    let mut v = vec![
        params.translation.x,
        params.translation.y,
        params.azimuth,
        params.scale,
    ];
    v.extend_from_slice(&params.deform);
    DVector::from_vec(v)
}

/// Inverse of [`pack`]; the azimuth is wrapped.
pub fn unpack(x: &DVector<f64>) -> PlacementParams {
    PlacementParams::new(
        Vector2::new(x[0], x[1]),
        x[2],
        x[3],
        x.iter().skip(4).copied().collect(),
    )
}

/// World position of keypoint `i` and its derivative with respect to the
/// packed parameters.
fn keypoint_with_jacobian(
    template: &TemplateModel,
    x: &DVector<f64>,
    i: usize,
) -> (Vector3<f64>, Matrix3xX<f64>) {
    let (theta, s) = (x[2], x[3]);
    let deform = &x.as_slice()[4..];
    let k = template.keypoint(deform, i);
    let rk = rotate_up(theta, &k);
    let world = Vector3::new(s * rk.x + x[0], s * rk.y, s * rk.z + x[1]);
    let mut jac = Matrix3xX::zeros(x.len());
    jac[(0, 0)] = 1.0;
    jac[(2, 1)] = 1.0;
    let (sn, c) = theta.sin_cos();
    jac.set_column(
        2,
        &(Vector3::new(-sn * k.x + c * k.z, 0.0, -c * k.x - sn * k.z) * s),
    );
    jac.set_column(3, &rk);
    for m in 0..deform.len() {
        jac.set_column(
            4 + m,
            &(rotate_up(theta, &template.mode_direction(m, i)) * s),
        );
    }
    (world, jac)
}

/// Residuals and Jacobian of one fitting stage.
pub struct Objective<'b> {
    problem: &'b FitProblem<'b>,
    active: &'b [PlacementParams],
}

impl Objective<'_> {
    pub fn len(&self, dim: usize) -> usize {
        let p = self.problem;
        let data = match p.stage {
            Stage::PairInit => 4,
            Stage::MapRefine => p.template.num_keypoints(),
        };
        data + (dim - 3) + 3 * self.active.len()
    }

    pub fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluate(x, false).map(|(r, _)| r)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.evaluate(x, true)
            .map(|(_, j)| j.expect("jacobian requested"))
    }

    fn evaluate(
        &self,
        x: &DVector<f64>,
        want_jac: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let p = self.problem;
        let dim = x.len();
        if !(x[3] > MIN_SCALE) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("scale left the feasible range".into()));
        }
        let n = self.len(dim);
        let mut r = DVector::zeros(n);
        let mut jac = want_jac.then(|| DMatrix::zeros(n, dim));
        let mut row = 0;

        match p.stage {
            Stage::PairInit => {
                let pair = p.anchor_pair.expect("validated");
                for anchor in [pair.first, pair.second] {
                    let (w, dw) = keypoint_with_jacobian(p.template, x, anchor.kind);
                    let (z, dz) = p.camera.project_with_jacobian(&w)?;
                    let gap = z - anchor.position;
                    r[row] = gap.x;
                    r[row + 1] = gap.y;
                    if let Some(j) = jac.as_mut() {
                        j.view_mut((row, 0), (2, dim)).copy_from(&(dz * dw));
                    }
                    row += 2;
                }
            }
            Stage::MapRefine => {
                let maps = p.maps.expect("validated");
                for i in 0..p.template.num_keypoints() {
                    let (w, dw) = keypoint_with_jacobian(p.template, x, i);
                    let (z, dz) = p.camera.project_with_jacobian(&w)?;
                    let (m, grad) = maps.sample_with_gradient(i, &z);
                    r[row] = 1.0 - m;
                    if let Some(j) = jac.as_mut() {
                        let d = -(grad.transpose() * dz * dw);
                        j.view_mut((row, 0), (1, dim)).copy_from(&d);
                    }
                    row += 1;
                }
            }
        }

        let (a1, a2) = (p.alpha1.sqrt(), p.alpha2.sqrt());
        r[row] = a1 * (x[3] - 1.0);
        if let Some(j) = jac.as_mut() {
            j[(row, 3)] = a1;
        }
        row += 1;
        // deformation is penalised in standard deviations of each mode
        for (m, l) in (4..dim).zip(p.template.eigenvalues()) {
            let w = a2 / l.sqrt();
            r[row] = w * x[m];
            if let Some(j) = jac.as_mut() {
                j[(row, m)] = w;
            }
            row += 1;
        }

        if let Some(prior) = &p.prior {
            let candidate = PlacementParams {
                translation: Vector2::new(x[0], x[1]),
                azimuth: x[2],
                scale: x[3],
                deform: Vec::new(),
            };
            for fixed in self.active {
                let pose = RelativePose::between(fixed, &candidate);
                let (_, k) = prior.gmm.maxmix_nll(&pose);
                let comp = &prior.gmm.components()[k];
                let e = comp.whiten(&pose.as_vector()) * std::f64::consts::FRAC_1_SQRT_2;
                r.rows_mut(row, 3).copy_from(&e);
                if let Some(j) = jac.as_mut() {
                    let (s, c) = (-fixed.azimuth).sin_cos();
                    let d_pose = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
                    let d = comp.chol_inv() * d_pose * std::f64::consts::FRAC_1_SQRT_2;
                    j.view_mut((row, 0), (3, 3)).copy_from(&d);
                }
                row += 3;
            }
        }
        debug_assert_eq!(row, n);
        Ok((r, jac))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub params: PlacementParams,
    /// Final objective as a plain sum of squared residuals.
    pub residual: f64,
    /// Mean squared map residual per keypoint; only set by map refinement.
    pub mean_map_residual: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<LmStep>,
}

impl FitResult {
    fn rejected(params: PlacementParams) -> Self {
        Self {
            params,
            residual: f64::INFINITY,
            mean_map_residual: None,
            converged: false,
            iterations: 0,
            trace: Vec::new(),
        }
    }

    /// True when map refinement succeeded below the acceptance threshold.
    pub fn accepted(&self, tau_u: f64) -> bool {
        self.mean_map_residual.is_some_and(|m| m < tau_u)
    }
}

/// Ground translation that puts template keypoint `kind` on the ray through
/// `anchor`, at the keypoint's own height, for the given azimuth.
fn back_projected_translation(
    camera: &Camera,
    template: &TemplateModel,
    anchor: &Anchor,
    azimuth: f64,
) -> Vector2<f64> {
    let k = template.keypoint(&vec![0.0; template.modes()], anchor.kind);
    let origin = camera.position();
    let dir = camera.ray_direction(&anchor.position);
    let mut lambda = (k.y - origin.y) / dir.y;
    if !(lambda.is_finite() && lambda > 0.0) {
        // Ray never reaches that height; fall back to a nominal depth.
        lambda = 4.0;
    }
    let hit = origin + dir * lambda;
    Vector2::new(hit.x, hit.z) - rotate_ground(azimuth, &Vector2::new(k.x, k.z))
}

fn run(
    problem: &FitProblem,
    active: &[PlacementParams],
    init: &PlacementParams,
) -> Result<FitResult> {
    let objective = problem.objective(active);
    let out = lm_minimize(
        |x| objective.residuals(x),
        |x| objective.jacobian(x),
        pack(init),
        &problem.lm,
    )?;
    let params = unpack(&out.x);
    let mean_map_residual = match problem.stage {
        Stage::PairInit => None,
        Stage::MapRefine => {
            let r = objective.residuals(&out.x)?;
            let n = problem.template.num_keypoints();
            Some(r.rows(0, n).norm_squared() / n as f64)
        }
    };
    Ok(FitResult {
        params,
        residual: 2.0 * out.objective,
        mean_map_residual,
        converged: out.converged,
        iterations: out.iterations,
        trace: out.trace,
    })
}

/// Pair fit from every azimuth seed, keeping the lowest residual (earliest
/// seed on ties). Seeds that start behind the camera are skipped; if all of
/// them fail the result is non-converged with infinite residual.
pub fn fit_initial(problem: &FitProblem) -> Result<FitResult> {
    if problem.stage != Stage::PairInit {
        return Err(Error::InvalidInput(
            "fit_initial needs a pair-init problem".into(),
        ));
    }
    problem.validate()?;
    let pair = problem.anchor_pair.expect("validated");
    let modes = problem.template.modes();
    let mut best: Option<FitResult> = None;
    for s in 0..AZIMUTH_SEEDS {
        let azimuth = 2.0 * PI * s as f64 / AZIMUTH_SEEDS as f64;
        let t = back_projected_translation(problem.camera, problem.template, &pair.first, azimuth);
        let init = PlacementParams {
            translation: t,
            azimuth,
            scale: 1.0,
            deform: vec![0.0; modes],
        };
        let Ok(fit) = run(problem, &[], &init) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| fit.residual < b.residual) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap_or_else(|| {
        FitResult::rejected(PlacementParams::rigid(Vector2::zeros(), 0.0, modes))
    }))
}

/// Refinement against all keypoint maps from `init`. Prior objects are
/// those within the mixture radius of `init`.
pub fn fit_refine(problem: &FitProblem, init: &PlacementParams) -> Result<FitResult> {
    if problem.stage != Stage::MapRefine {
        return Err(Error::InvalidInput(
            "fit_refine needs a map-refine problem".into(),
        ));
    }
    problem.validate()?;
    if init.deform.len() != problem.template.modes() {
        return Err(Error::InvalidInput(
            "init deformation has the wrong length".into(),
        ));
    }
    let active = problem.active_fixed(init);
    match run(problem, &active, init) {
        Ok(r) => Ok(r),
        Err(Error::BehindCamera { .. })
        | Err(Error::InvalidInput(_))
        | Err(Error::NonFiniteResidual) => Ok(FitResult::rejected(init.clone())),
        Err(e) => Err(e),
    }
}

/// Writes LM trial steps as JSON lines tagged with `label`.
pub fn write_trace(mut out: impl Write, label: &str, steps: &[LmStep]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        fit: &'a str,
        #[serde(flatten)]
        step: &'a LmStep,
    }
    for step in steps {
        serde_json::to_writer(&mut out, &Line { fit: label, step })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Azimuth difference in radians, wrapped into `[0, pi]`.
pub fn azimuth_gap(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}
