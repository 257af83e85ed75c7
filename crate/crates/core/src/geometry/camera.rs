use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera height above the ground plane used when no position is given.
pub const EYE_HEIGHT: f64 = 1.8;

const MIN_DEPTH: f64 = 1e-6;

/// Pinhole camera over a ground plane at `y = 0` with `+y` up.
///
/// `rotation` maps world directions into camera coordinates, where the camera
/// looks along `+z`, `+x` points right in the image and `+y` points up. The
/// principal point sits at the image center. [`Camera::project`] returns
/// continuous coordinates on the keypoint-map grid, where cell `(i, j)` covers
/// `[i, i + 1) x [j, j + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    rotation: Matrix3<f64>,
    focal_length: f64,
    position: Vector3<f64>,
    image_size: (u32, u32),
    map_size: (u32, u32),
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        focal_length: f64,
        position: Vector3<f64>,
        image_size: (u32, u32),
        map_size: (u32, u32),
    ) -> Result<Self> {
        let defect = (rotation * rotation.transpose() - Matrix3::identity()).amax();
        if !(defect <= 1e-9) {
            return Err(Error::InvalidInput(format!(
                "camera rotation is not orthonormal (|R R^T - I| = {defect:.3e})"
            )));
        }
        if !(focal_length > 0.0) || !focal_length.is_finite() {
            return Err(Error::InvalidInput(format!(
                "focal length must be positive, got {focal_length}"
            )));
        }
        if image_size.0 == 0 || image_size.1 == 0 || map_size.0 == 0 || map_size.1 == 0 {
            return Err(Error::InvalidInput(
                "image and map sizes must be strictly positive".into(),
            ));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("camera position must be finite".into()));
        }
        Ok(Self {
            rotation,
            focal_length,
            position,
            image_size,
            map_size,
        })
    }

    /// Camera placed at eye height above the world origin.
    pub fn at_eye_height(
        rotation: Matrix3<f64>,
        focal_length: f64,
        image_size: (u32, u32),
        map_size: (u32, u32),
    ) -> Result<Self> {
        Self::new(
            rotation,
            focal_length,
            Vector3::new(0.0, EYE_HEIGHT, 0.0),
            image_size,
            map_size,
        )
    }

    /// Eye-height camera looking along world `+z`, tilted down by `pitch` radians.
    pub fn pitched(
        pitch: f64,
        focal_length: f64,
        image_size: (u32, u32),
        map_size: (u32, u32),
    ) -> Result<Self> {
        Self::at_eye_height(pitch_rotation(pitch), focal_length, image_size, map_size)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn focal_length(&self) -> f64 {
        self.focal_length
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn map_size(&self) -> (u32, u32) {
        self.map_size
    }

    /// Same camera translated by `offset` in world space.
    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self {
            position: self.position + offset,
            ..self.clone()
        }
    }

    /// Copy of this camera rendering onto a map grid of a different size.
    pub fn with_map_size(&self, map_size: (u32, u32)) -> Result<Self> {
        Self::new(
            self.rotation,
            self.focal_length,
            self.position,
            self.image_size,
            map_size,
        )
    }

    fn map_scale(&self) -> (f64, f64) {
        (
            self.map_size.0 as f64 / self.image_size.0 as f64,
            self.map_size.1 as f64 / self.image_size.1 as f64,
        )
    }

    pub fn to_camera_frame(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (world - self.position)
    }

    /// World-space unit direction of the ray through a map-grid position.
    pub fn ray_direction(&self, map_point: &Vector2<f64>) -> Vector3<f64> {
        let (sx, sy) = self.map_scale();
        let u = map_point.x / sx - self.image_size.0 as f64 / 2.0;
        let v = map_point.y / sy - self.image_size.1 as f64 / 2.0;
        let cam = Vector3::new(u / self.focal_length, -v / self.focal_length, 1.0);
        (self.rotation.transpose() * cam).normalize()
    }

    /// Projects a world point onto the keypoint-map grid.
    pub fn project(&self, world: &Vector3<f64>) -> Result<Vector2<f64>> {
        let c = self.to_camera_frame(world);
        if !(c.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { depth: c.z });
        }
        let (sx, sy) = self.map_scale();
        let f = self.focal_length;
        let u = self.image_size.0 as f64 / 2.0 + f * c.x / c.z;
        let v = self.image_size.1 as f64 / 2.0 - f * c.y / c.z;
        Ok(Vector2::new(u * sx, v * sy))
    }

    /// Projection together with its derivative with respect to the world point.
    pub fn project_with_jacobian(
        &self,
        world: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
        let c = self.to_camera_frame(world);
        if !(c.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { depth: c.z });
        }
        let (sx, sy) = self.map_scale();
        let f = self.focal_length;
        let iz = 1.0 / c.z;
        let u = self.image_size.0 as f64 / 2.0 + f * c.x * iz;
        let v = self.image_size.1 as f64 / 2.0 - f * c.y * iz;
        let d_cam = Matrix2x3::new(
            sx * f * iz,
            0.0,
            -sx * f * c.x * iz * iz,
            0.0,
            -sy * f * iz,
            sy * f * c.y * iz * iz,
        );
        Ok((Vector2::new(u * sx, v * sy), d_cam * self.rotation))
    }
}

/// World-to-camera rotation for a camera looking along `+z` pitched down.
pub fn pitch_rotation(pitch: f64) -> Matrix3<f64> {
    let (s, c) = pitch.sin_cos();
    // rows are the camera axes expressed in world coordinates
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    rotation: [f64; 9],
    focal_length: f64,
    position: [f64; 3],
    image_size: [u32; 2],
    map_size: [u32; 2],
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        Camera::new(
            Matrix3::from_row_slice(&j.rotation),
            j.focal_length,
            Vector3::from(j.position),
            (j.image_size[0], j.image_size[1]),
            (j.map_size[0], j.map_size[1]),
        )
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        CameraJson {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            focal_length: c.focal_length,
            position: [c.position.x, c.position.y, c.position.z],
            image_size: [c.image_size.0, c.image_size.1],
            map_size: [c.map_size.0, c.map_size.1],
        }
    }
}
