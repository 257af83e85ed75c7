//! Pairwise co-occurrence statistics.
//!
//! Relative poses of nearby object pairs are modelled with a Gaussian
//! mixture over `(dx, dz, dtheta)`, where the angle coordinate is treated
//! circularly. The mixture provides densities for selection energies and
//! the Max-Mixture negative log-likelihood used as a fitting prior.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_ground, wrap_angle, PlacementParams};

/// Pairs farther apart than this are not modelled.
pub const DEFAULT_DELTA_R: f64 = 1.5;
/// Added to covariance diagonals after every M-step.
pub const DIAG_BIAS: f64 = 0.01;
pub const DEFAULT_COMPONENTS: usize = 5;
/// Clamp applied before taking a logit.
pub const LOGIT_EPS: f64 = 1e-9;

const MAX_EM_ITERATIONS: usize = 500;
const EM_TOLERANCE: f64 = 1e-7;
const MIN_WEIGHT: f64 = 1e-6;

/// Pose of one object expressed in another object's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub delta_t: Vector2<f64>,
    pub delta_theta: f64,
}

impl RelativePose {
    /// Pose of `other` in the frame of `reference`.
    pub fn between(reference: &PlacementParams, other: &PlacementParams) -> Self {
        Self {
            delta_t: rotate_ground(
                -reference.azimuth,
                &(other.translation - reference.translation),
            ),
            delta_theta: wrap_angle(other.azimuth - reference.azimuth),
        }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.delta_t.x, self.delta_t.y, self.delta_theta)
    }
}

/// Difference with the angle coordinate wrapped.
#[inline]
pub(crate) fn circular_diff(x: &Vector3<f64>, mean: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(x.x - mean.x, x.y - mean.y, wrap_angle(x.z - mean.z))
}

/// Relative poses of every ordered pair within `delta_r` in each scene.
pub fn extract_pairs(scenes: &[Vec<PlacementParams>], delta_r: f64) -> Vec<RelativePose> {
    let mut out = Vec::new();
    for scene in scenes {
        for (i, a) in scene.iter().enumerate() {
            for (j, b) in scene.iter().enumerate() {
                if i != j && (a.translation - b.translation).norm() <= delta_r {
                    out.push(RelativePose::between(a, b));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    /// Inverse of the lower Cholesky factor of `covariance`.
    chol_inv: Matrix3<f64>,
    /// `ln(weight * eta)` with `eta` the Gaussian normaliser.
    log_weighted_norm: f64,
}

impl GmmComponent {
    pub fn new(weight: f64, mean: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self> {
        let chol = covariance
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
        let l = chol.l();
        let chol_inv = l
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("singular covariance".into()))?;
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !(weight > 0.0) {
            return Err(Error::InvalidInput(format!(
                "mixture weight {weight} must be positive"
            )));
        }
        Ok(Self {
            weight,
            mean: Vector3::new(mean.x, mean.y, wrap_angle(mean.z)),
            covariance,
            chol_inv,
            log_weighted_norm: weight.ln() - 1.5 * (2.0 * PI).ln() - 0.5 * log_det,
        })
    }

    /// Whitened residual `L^-1 (x - mean)` with a wrapped angle difference.
    pub fn whiten(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.chol_inv * circular_diff(x, &self.mean)
    }

    pub fn chol_inv(&self) -> &Matrix3<f64> {
        &self.chol_inv
    }

    /// `ln(w * eta)`.
    pub fn log_weighted_norm(&self) -> f64 {
        self.log_weighted_norm
    }

    fn log_weighted_density(&self, x: &Vector3<f64>) -> f64 {
        self.log_weighted_norm - 0.5 * self.whiten(x).norm_squared()
    }
}

/// Mixture over relative poses.
#[derive(Debug)]
pub struct PairwiseGmm {
    components: Vec<GmmComponent>,
    delta_r: f64,
    evaluations: AtomicU64,
}

impl Clone for PairwiseGmm {
    fn clone(&self) -> Self {
        Self {
            components: self.components.clone(),
            delta_r: self.delta_r,
            evaluations: AtomicU64::new(0),
        }
    }
}

impl PartialEq for PairwiseGmm {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components && self.delta_r == other.delta_r
    }
}

impl PairwiseGmm {
    pub fn new(components: Vec<GmmComponent>, delta_r: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput(
                "mixture needs at least one component".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}"
            )));
        }
        if !(delta_r > 0.0) {
            return Err(Error::InvalidInput("delta_r must be positive".into()));
        }
        Ok(Self {
            components,
            delta_r,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn delta_r(&self) -> f64 {
        self.delta_r
    }

    /// Number of density or NLL evaluations made so far.
    pub fn evaluation_count(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn count(&self) {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
    }

    pub fn log_density(&self, pose: &RelativePose) -> f64 {
        self.count();
        let x = pose.as_vector();
        log_sum_exp(self.components.iter().map(|c| c.log_weighted_density(&x)))
    }

    pub fn density(&self, pose: &RelativePose) -> f64 {
        self.log_density(pose).exp()
    }

    /// Max-Mixture negative log-likelihood and the component attaining it.
    pub fn maxmix_nll(&self, pose: &RelativePose) -> (f64, usize) {
        self.count();
        let x = pose.as_vector();
        let mut best = (f64::INFINITY, 0);
        for (k, c) in self.components.iter().enumerate() {
            let v = -c.log_weighted_density(&x);
            if v < best.0 {
                best = (v, k);
            }
        }
        best
    }

    /// Selection energy for a co-occurring pair at this relative pose.
    pub fn pair_energy(&self, pose: &RelativePose, beta: f64) -> f64 {
        energy_from_log_score(beta * self.log_density(pose))
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-logit(clamp(p, eps, 1 - eps))`.
pub fn neg_logit_clamped(p: f64) -> f64 {
    let p = if p.is_nan() { 0.0 } else { p }.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    -(p / (1.0 - p)).ln()
}

/// [`neg_logit_clamped`] of `exp(log_p)`, robust to underflow.
pub fn energy_from_log_score(log_p: f64) -> f64 {
    neg_logit_clamped(log_p.exp())
}

/// Fits a mixture with EM from a k-means++ start.
pub fn fit_gmm(samples: &[RelativePose], n_components: usize, seed: u64) -> Result<PairwiseGmm> {
    fit_gmm_traced(samples, n_components, seed, DEFAULT_DELTA_R).map(|(g, _)| g)
}

/// Like [`fit_gmm`] with an explicit radius, also returning the mean
/// log-likelihood after every EM iteration of the final run.
pub fn fit_gmm_traced(
    samples: &[RelativePose],
    n_components: usize,
    seed: u64,
    delta_r: f64,
) -> Result<(PairwiseGmm, Vec<f64>)> {
    if n_components == 0 {
        return Err(Error::InvalidInput("need at least one component".into()));
    }
    let need = 10 * n_components;
    if samples.len() < need {
        return Err(Error::InsufficientSamples {
            got: samples.len(),
            need,
        });
    }
    let xs: Vec<Vector3<f64>> = samples.iter().map(RelativePose::as_vector).collect();
    match run_em(&xs, n_components, seed) {
        Ok((comps, trace)) => Ok((PairwiseGmm::new(comps, delta_r)?, trace)),
        Err(Error::CollapsedComponent { .. }) if n_components > 1 => {
            let (comps, trace) = run_em(&xs, n_components - 1, seed)?;
            Ok((PairwiseGmm::new(comps, delta_r)?, trace))
        }
        Err(e) => Err(e),
    }
}

fn kmeans_pp(xs: &[Vector3<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut centers = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs
        .iter()
        .map(|x| circular_diff(x, &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = xs.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = xs[pick];
        centers.push(c);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min(circular_diff(x, &c).norm_squared());
        }
    }
    centers
}

fn run_em(xs: &[Vector3<f64>], k: usize, seed: u64) -> Result<(Vec<GmmComponent>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(xs, k, &mut rng);
    let k = centers.len();
    let n = xs.len() as f64;

    // Start from the pooled covariance around the nearest centers.
    let mut pooled = Matrix3::zeros();
    for x in xs {
        let d = centers
            .iter()
            .map(|c| circular_diff(x, c))
            .min_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
            .unwrap();
        pooled += d * d.transpose();
    }
    let start_cov = pooled / n + Matrix3::identity() * DIAG_BIAS;
    let mut comps: Vec<GmmComponent> = centers
        .iter()
        .map(|c| GmmComponent::new(1.0 / k as f64, *c, start_cov))
        .collect::<Result<_>>()?;

    let mut resp = vec![0.0; xs.len() * k];
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..MAX_EM_ITERATIONS {
        // E-step
        let mut ll = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for (r, c) in row.iter_mut().zip(&comps) {
                *r = c.log_weighted_density(x);
            }
            let lse = log_sum_exp(row.iter().copied());
            ll += lse;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
        }
        let mean_ll = ll / n;
        trace.push(mean_ll);
        if mean_ll - prev_ll < EM_TOLERANCE {
            break;
        }
        prev_ll = mean_ll;

        // M-step
        let mut next = Vec::with_capacity(k);
        for (j, old) in comps.iter().enumerate() {
            let nk: f64 = (0..xs.len()).map(|i| resp[i * k + j]).sum();
            let weight = nk / n;
            if weight < MIN_WEIGHT {
                return Err(Error::CollapsedComponent {
                    component: j,
                    weight,
                });
            }
            let mut offset = Vector3::zeros();
            for (i, x) in xs.iter().enumerate() {
                offset += circular_diff(x, &old.mean) * resp[i * k + j];
            }
            let mean = old.mean + offset / nk;
            let mean = Vector3::new(mean.x, mean.y, wrap_angle(mean.z));
            let mut cov = Matrix3::zeros();
            for (i, x) in xs.iter().enumerate() {
                let d = circular_diff(x, &mean);
                cov += d * d.transpose() * resp[i * k + j];
            }
            cov = cov / nk + Matrix3::identity() * DIAG_BIAS;
            next.push(GmmComponent::new(weight, mean, cov)?);
        }
        let total: f64 = next.iter().map(|c| c.weight).sum();
        comps = next
            .into_iter()
            .map(|c| GmmComponent::new(c.weight / total, c.mean, c.covariance))
            .collect::<Result<_>>()?;
    }
    Ok((comps, trace))
}

#[derive(Debug, Serialize, Deserialize)]
struct ComponentJson {
    weight: f64,
    mean: [f64; 3],
    covariance: [f64; 9],
}

#[derive(Debug, Serialize, Deserialize)]
struct GmmJson {
    delta_r: f64,
    components: Vec<ComponentJson>,
}

impl Serialize for PairwiseGmm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GmmJson {
            delta_r: self.delta_r,
            components: self
                .components
                .iter()
                .map(|c| {
                    let mut covariance = [0.0; 9];
                    for r in 0..3 {
                        for col in 0..3 {
                            covariance[r * 3 + col] = c.covariance[(r, col)];
                        }
                    }
                    ComponentJson {
                        weight: c.weight,
                        mean: [c.mean.x, c.mean.y, c.mean.z],
                        covariance,
                    }
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PairwiseGmm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = GmmJson::deserialize(d)?;
        let comps = json
            .components
            .iter()
            .map(|c| {
                let cov = Matrix3::from_row_slice(&c.covariance);
                if (cov - cov.transpose()).amax() > 1e-9 {
                    return Err(Error::InvalidInput("covariance is not symmetric".into()));
                }
                GmmComponent::new(c.weight, Vector3::from(c.mean), cov)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        PairwiseGmm::new(comps, json.delta_r).map_err(serde::de::Error::custom)
    }
}
