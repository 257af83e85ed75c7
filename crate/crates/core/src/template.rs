//! Deformable keypoint template learned by PCA over a database of aligned
//! keypoint sets, plus nearest-database-model lookup.
//!
//! Sets are stacked as `[x0, y0, z0, x1, y1, z1, ...]`. The template is
//! `T(p) = mean + sum_i p_i * e_i` over the retained eigenvectors `e_i`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keypoints per object in the default (chair) configuration: four leg tips,
/// two seat-level back corners, two back-top corners.
pub const DEFAULT_NUM_KEYPOINTS: usize = 8;

/// Cumulative explained variance the retained modes must exceed.
pub const VARIANCE_TO_EXPLAIN: f64 = 0.85;

/// One database object's keypoints in canonical pose: centered on the
/// ground-plane origin, front facing `-z`, resting on `y = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub id: String,
    pub keypoints: Vec<Vector3<f64>>,
}

impl KeypointSet {
    pub fn new(id: impl Into<String>, keypoints: Vec<Vector3<f64>>) -> Self {
        Self {
            id: id.into(),
            keypoints,
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.keypoints.len() * 3,
            self.keypoints.iter().flat_map(|k| [k.x, k.y, k.z]),
        )
    }

    fn check_canonical(&self, n_keypoints: usize) -> Result<()> {
        if self.keypoints.len() != n_keypoints {
            return Err(Error::InvalidInput(format!(
                "keypoint set '{}' has {} keypoints, expected {}",
                self.id,
                self.keypoints.len(),
                n_keypoints
            )));
        }
        let min_y = self
            .keypoints
            .iter()
            .map(|k| k.y)
            .fold(f64::INFINITY, f64::min);
        if min_y.abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "keypoint set '{}' does not rest on the ground (min y = {min_y})",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseEntry {
    pub id: String,
    pub coords: Vec<f64>,
}

/// PCA keypoint template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateJson", into = "TemplateJson")]
pub struct TemplateModel {
    mean: DVector<f64>,
    /// One retained eigenvector per row.
    eigenvectors: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    variance_fraction: f64,
    database: Vec<DatabaseEntry>,
}

impl TemplateModel {
    pub fn num_keypoints(&self) -> usize {
        self.mean.len() / 3
    }

    /// Number of retained deformation modes.
    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn variance_fraction(&self) -> f64 {
        self.variance_fraction
    }

    pub fn database(&self) -> &[DatabaseEntry] {
        &self.database
    }

    /// Mean shape as keypoints.
    pub fn mean_shape(&self) -> Vec<Vector3<f64>> {
        unstack(&self.mean)
    }

    /// Keypoint `i` of the deformed template.
    pub fn keypoint(&self, deform: &[f64], i: usize) -> Vector3<f64> {
        let mut k = Vector3::new(self.mean[3 * i], self.mean[3 * i + 1], self.mean[3 * i + 2]);
        for (m, p) in deform.iter().enumerate() {
            k.x += p * self.eigenvectors[(m, 3 * i)];
            k.y += p * self.eigenvectors[(m, 3 * i + 1)];
            k.z += p * self.eigenvectors[(m, 3 * i + 2)];
        }
        k
    }

    /// Derivative of keypoint `i` with respect to deformation weight `mode`.
    pub fn mode_direction(&self, mode: usize, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.eigenvectors[(mode, 3 * i)],
            self.eigenvectors[(mode, 3 * i + 1)],
            self.eigenvectors[(mode, 3 * i + 2)],
        )
    }

    /// Deformed template keypoints for the given weights.
    pub fn instantiate(&self, deform: &[f64]) -> Vec<Vector3<f64>> {
        assert_eq!(
            deform.len(),
            self.modes(),
            "deform length must equal mode count"
        );
        let stacked = &self.mean
            + self
                .eigenvectors
                .tr_mul(&DVector::from_column_slice(deform));
        unstack(&stacked)
    }

    /// Mahalanobis distance of a deformation from the mean shape.
    pub fn shape_distance(&self, deform: &[f64]) -> f64 {
        deform
            .iter()
            .zip(&self.eigenvalues)
            .map(|(p, l)| p * p / l)
            .sum::<f64>()
            .sqrt()
    }

    /// PCA coordinates of an arbitrary keypoint set.
    pub fn project(&self, keypoints: &[Vector3<f64>]) -> Vec<f64> {
        let x = KeypointSet::new("", keypoints.to_vec()).stacked();
        (&self.eigenvectors * (x - &self.mean))
            .iter()
            .copied()
            .collect()
    }

    /// Id of the database member closest in PCA space; ties go to the
    /// lexicographically smallest id.
    pub fn nearest_model(&self, deform: &[f64]) -> Option<&str> {
        let dist = |e: &DatabaseEntry| -> f64 {
            e.coords
                .iter()
                .zip(deform)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let mut best: Option<(&DatabaseEntry, f64)> = None;
        for e in &self.database {
            let d = dist(e);
            best = match best {
                Some((b, bd)) if bd < d || (bd == d && b.id <= e.id) => Some((b, bd)),
                _ => Some((e, d)),
            };
        }
        best.map(|(e, _)| e.id.as_str())
    }
}

fn unstack(v: &DVector<f64>) -> Vec<Vector3<f64>> {
    v.as_slice()
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

/// Learns the PCA template from a database of canonical keypoint sets.
pub fn build_template(database: &[KeypointSet]) -> Result<TemplateModel> {
    if database.len() < 2 {
        return Err(Error::DegenerateDatabase(format!(
            "need at least 2 keypoint sets, got {}",
            database.len()
        )));
    }
    let nk = database[0].keypoints.len();
    if nk == 0 {
        return Err(Error::InvalidInput("keypoint sets are empty".into()));
    }
    for set in database {
        set.check_canonical(nk)?;
    }
    let dim = 3 * nk;
    let n = database.len();
    let data = DMatrix::from_fn(n, dim, |r, c| {
        let k = &database[r].keypoints[c / 3];
        k[c % 3]
    });
    let mean = DVector::from_iterator(dim, data.column_iter().map(|c| c.mean()));
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let total: f64 = cov.trace();
    if !(total > 1e-18) {
        return Err(Error::DegenerateDatabase(
            "all keypoint sets are identical (zero variance)".into(),
        ));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut k = 0;
    let mut explained = 0.0;
    while k < dim {
        explained += eig.eigenvalues[order[k]].max(0.0);
        k += 1;
        if explained / total > VARIANCE_TO_EXPLAIN {
            break;
        }
    }

    let mut eigenvectors = DMatrix::zeros(k, dim);
    let mut eigenvalues = Vec::with_capacity(k);
    for (row, &idx) in order[..k].iter().enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        // deterministic sign: largest-magnitude component positive
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        eigenvectors.set_row(row, &v.transpose());
        eigenvalues.push(eig.eigenvalues[idx]);
    }

    let entries = database
        .iter()
        .enumerate()
        .map(|(r, set)| DatabaseEntry {
            id: set.id.clone(),
            coords: (&eigenvectors * centered.row(r).transpose())
                .iter()
                .copied()
                .collect(),
        })
        .collect();

    Ok(TemplateModel {
        mean,
        eigenvectors,
        eigenvalues,
        variance_fraction: explained / total,
        database: entries,
    })
}

#[derive(Serialize, Deserialize)]
struct TemplateJson {
    mean: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    k: usize,
    #[serde(default)]
    variance_fraction: f64,
    database_projections: Vec<DatabaseEntry>,
}

impl TryFrom<TemplateJson> for TemplateModel {
    type Error = Error;

    fn try_from(j: TemplateJson) -> Result<Self> {
        let dim = j.mean.len();
        if dim == 0 || !dim.is_multiple_of(3) {
            return Err(Error::InvalidInput(format!(
                "template mean length {dim} is not a positive multiple of 3"
            )));
        }
        if j.eigenvectors.len() != j.k || j.eigenvalues.len() != j.k || j.k == 0 {
            return Err(Error::InvalidInput(format!(
                "template declares k = {} but has {} eigenvectors and {} eigenvalues",
                j.k,
                j.eigenvectors.len(),
                j.eigenvalues.len()
            )));
        }
        if j.eigenvectors.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidInput("eigenvector length mismatch".into()));
        }
        if j.database_projections.iter().any(|e| e.coords.len() != j.k) {
            return Err(Error::InvalidInput(
                "database projection length differs from k".into(),
            ));
        }
        Ok(TemplateModel {
            mean: DVector::from_vec(j.mean),
            eigenvectors: DMatrix::from_fn(j.k, dim, |r, c| j.eigenvectors[r][c]),
            eigenvalues: j.eigenvalues,
            variance_fraction: j.variance_fraction,
            database: j.database_projections,
        })
    }
}

impl From<TemplateModel> for TemplateJson {
    fn from(t: TemplateModel) -> Self {
        TemplateJson {
            k: t.modes(),
            mean: t.mean.iter().copied().collect(),
            eigenvectors: t
                .eigenvectors
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            eigenvalues: t.eigenvalues,
            variance_fraction: t.variance_fraction,
            database_projections: t.database,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chair(id: &str, back: f64) -> KeypointSet {
        let (w, d, seat) = (0.22, 0.22, 0.45);
        KeypointSet::new(
            id,
            vec![
                Vector3::new(-w, 0.0, -d),
                Vector3::new(w, 0.0, -d),
                Vector3::new(-w, 0.0, d),
                Vector3::new(w, 0.0, d),
                Vector3::new(-w, seat, d),
                Vector3::new(w, seat, d),
                Vector3::new(-w, back, d),
                Vector3::new(w, back, d),
            ],
        )
    }

    #[test]
    fn two_back_heights_give_one_mode() {
        let t = build_template(&[chair("a", 0.8), chair("b", 1.0)]).unwrap();
        assert_eq!(t.modes(), 1);
        assert_abs_diff_eq!(t.mean()[3 * 6 + 1], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(t.mean()[3 * 7 + 1], 0.9, epsilon = 1e-12);
        let e = t.eigenvectors().row(0);
        for (c, v) in e.iter().enumerate() {
            if c == 3 * 6 + 1 || c == 3 * 7 + 1 {
                assert_abs_diff_eq!(v.abs(), 0.5f64.sqrt(), epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
        // two points at +-0.1 along two coordinates: sample variance 2 * 0.02
        assert_abs_diff_eq!(t.eigenvalues()[0], 0.04, epsilon = 1e-12);
    }

    #[test]
    fn identical_sets_are_degenerate() {
        let err = build_template(&[chair("a", 0.9), chair("b", 0.9), chair("c", 0.9)]).unwrap_err();
        assert!(matches!(err, Error::DegenerateDatabase(_)));
        assert!(build_template(&[chair("a", 0.9)]).is_err());
    }

    #[test]
    fn rejects_floating_sets() {
        let mut c = chair("a", 0.9);
        for k in &mut c.keypoints {
            k.y += 0.1;
        }
        assert!(build_template(&[c, chair("b", 0.8)]).is_err());
    }

    fn random_db(n: usize, seed: u64) -> Vec<KeypointSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let w = 0.22 + rng.random_range(-0.04..0.04);
                let d = 0.22 + rng.random_range(-0.04..0.04);
                let back = 0.9 + rng.random_range(-0.1..0.1);
                let seat = 0.45 + rng.random_range(-0.03..0.03);
                KeypointSet::new(
                    format!("m{i:02}"),
                    vec![
                        Vector3::new(-w, 0.0, -d),
                        Vector3::new(w, 0.0, -d),
                        Vector3::new(-w, 0.0, d),
                        Vector3::new(w, 0.0, d),
                        Vector3::new(-w, seat, d),
                        Vector3::new(w, seat, d),
                        Vector3::new(-w, back, d + 0.03),
                        Vector3::new(w, back, d + 0.03),
                    ],
                )
            })
            .collect()
    }

    #[test]
    fn eigen_structure() {
        let t = build_template(&random_db(20, 3)).unwrap();
        let e = t.eigenvectors();
        let gram = e * e.transpose();
        assert_abs_diff_eq!(
            gram,
            DMatrix::identity(t.modes(), t.modes()),
            epsilon = 1e-9
        );
        assert!(t.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        assert!(t.variance_fraction() > VARIANCE_TO_EXPLAIN);
    }

    #[test]
    fn instantiate_is_linear() {
        let t = build_template(&random_db(12, 9)).unwrap();
        let k = t.modes();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..k).map(|_| rng.random_range(-0.1..0.1)).collect();
        let q: Vec<f64> = (0..k).map(|_| rng.random_range(-0.1..0.1)).collect();
        let pq: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a + b).collect();
        let zero = vec![0.0; k];
        assert_eq!(t.instantiate(&zero), t.mean_shape());
        let (a, b, c, d) = (
            t.instantiate(&p),
            t.instantiate(&q),
            t.instantiate(&zero),
            t.instantiate(&pq),
        );
        for i in 0..t.num_keypoints() {
            assert_abs_diff_eq!((a[i] + b[i] - c[i] - d[i]).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!((t.keypoint(&p, i) - a[i]).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reconstruction_error_matches_discarded_variance() {
        let db = random_db(15, 21);
        let t = build_template(&db).unwrap();
        let n = db.len() as f64;
        let dim = 3 * t.num_keypoints();
        // full spectrum from an independent decomposition of the same data
        let full = {
            let mut m = DMatrix::zeros(db.len(), dim);
            for (r, s) in db.iter().enumerate() {
                m.set_row(r, &(s.stacked() - t.mean()).transpose());
            }
            SymmetricEigen::new(m.tr_mul(&m) / (n - 1.0)).eigenvalues
        };
        let mut spectrum: Vec<f64> = full.iter().copied().collect();
        spectrum.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = spectrum[t.modes()..].iter().map(|v| v.max(0.0)).sum();

        let mut total_err = 0.0;
        for s in &db {
            let rec = t.instantiate(&t.project(&s.keypoints));
            let err: f64 = rec
                .iter()
                .zip(&s.keypoints)
                .map(|(a, b)| (a - b).norm_squared())
                .sum();
            assert!(err <= discarded * (n - 1.0) + 1e-9);
            total_err += err;
        }
        assert_abs_diff_eq!(total_err / n, discarded * (n - 1.0) / n, epsilon = 1e-9);
    }

    #[test]
    fn nearest_model_rules() {
        let db = random_db(10, 5);
        let t = build_template(&db).unwrap();
        for e in t.database() {
            assert_eq!(t.nearest_model(&e.coords), Some(e.id.as_str()));
        }
        // symmetric pair around the mean: tie goes to the smaller id
        let t2 = build_template(&[chair("zeta", 0.8), chair("alpha", 1.0)]).unwrap();
        assert_eq!(t2.nearest_model(&[0.0]), Some("alpha"));
    }

    #[test]
    fn json_round_trip() {
        let t = build_template(&random_db(8, 2)).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["k"].as_u64().unwrap() as usize, t.modes());
        assert!(v["database_projections"].is_array());
        let back: TemplateModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
