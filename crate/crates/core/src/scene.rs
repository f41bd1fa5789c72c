//! Gaussian primitives, pinhole cameras and scenes.
//!
//! Covariances are always held factored as per-axis scales plus a unit
//! quaternion, so `Σ = R·diag(s²)·Rᵀ` is symmetric positive definite by
//! construction.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("gaussian scale components must be strictly positive and finite, got {0:?}")]
    NonPositiveScale([f64; 3]),
    #[error("gaussian rotation quaternion must have unit norm, got norm {0}")]
    NonUnitRotation(f64),
    #[error("gaussian opacity must lie in [0, 1], got {0}")]
    OpacityOutOfRange(f64),
    #[error("gaussian color channels must lie in [0, 1], got {0:?}")]
    ColorOutOfRange([f64; 3]),
    #[error("gaussian center must be finite")]
    NonFiniteCenter,
    #[error("invalid camera {view_id}: {reason}")]
    InvalidCamera { view_id: u32, reason: String },
    #[error("covariance matrix is not symmetric positive definite")]
    NotSpd,
    #[error("unknown view id {0}")]
    UnknownView(u32),
}

/// One anisotropic Gaussian primitive with degree-0 (view independent) color.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub center: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn new(
        center: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        let g = Self {
            center,
            scale,
            rotation,
            opacity,
            color,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(SceneError::NonFiniteCenter);
        }
        if !self.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(SceneError::NonPositiveScale([
                self.scale.x,
                self.scale.y,
                self.scale.z,
            ]));
        }
        let n = self.rotation.quaternion().norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(SceneError::NonUnitRotation(n));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(SceneError::OpacityOutOfRange(self.opacity));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(SceneError::ColorOutOfRange([
                self.color.x,
                self.color.y,
                self.color.z,
            ]));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    /// Factors an SPD covariance back into (scale, rotation).
    ///
    /// The eigenvector frame is made right-handed before conversion so the
    /// rotation is proper.
    pub fn factor_covariance(
        cov: &Matrix3<f64>,
    ) -> Result<(Vector3<f64>, UnitQuaternion<f64>), SceneError> {
        let (values, mut axes) = jacobi_eigen(&((cov + cov.transpose()) * 0.5));
        if values.iter().any(|&l| !(l > 0.0)) {
            return Err(SceneError::NotSpd);
        }
        if axes.determinant() < 0.0 {
            let flipped = -axes.column(2);
            axes.set_column(2, &flipped);
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(axes);
        let scale = values.map(f64::sqrt);
        Ok((scale, UnitQuaternion::from_rotation_matrix(&rot)))
    }

    /// Index of the shortest principal axis (first one on ties).
    pub fn shortest_axis(&self) -> usize {
        let s = &self.scale;
        if s.x <= s.y && s.x <= s.z {
            0
        } else if s.y <= s.z {
            1
        } else {
            2
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric 3×3 matrix. Eigenvectors
/// are the columns of the returned matrix.
fn jacobi_eigen(m: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let mut a = *m;
    let mut v = Matrix3::identity();
    for _sweep in 0..64 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off <= f64::MIN_POSITIVE {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }
    (Vector3::new(a[(0, 0)], a[(1, 1)], a[(2, 2)]), v)
}

/// `exp(−½ (x−μ)ᵀ Σ⁻¹ (x−μ))`, evaluated in the Gaussian's local frame.
pub fn eval_gaussian(g: &Gaussian3D, x: &Vector3<f64>) -> f64 {
    let local = g.rotation.inverse_transform_vector(&(x - g.center));
    let m = local.component_div(&g.scale).norm_squared();
    (-0.5 * m).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pinhole camera with a world-to-camera pose `x_c = R·x_w + t`.
///
/// Pixel `(i, j)` is the image-plane point `(i, j)`; the principal point is
/// expressed in the same convention.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub view_id: u32,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraView {
    pub fn new(
        view_id: u32,
        width: usize,
        height: usize,
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        let cam = Self {
            view_id,
            width,
            height,
            intrinsics,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: String| SceneError::InvalidCamera {
            view_id: self.view_id,
            reason,
        };
        let k = &self.intrinsics;
        if self.width == 0 || self.height == 0 {
            return Err(bad("image size must be nonzero".into()));
        }
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(bad(format!("focal lengths must be positive ({}, {})", k.fx, k.fy)));
        }
        if !(k.cx >= 0.0 && k.cx < self.width as f64 && k.cy >= 0.0 && k.cy < self.height as f64)
        {
            return Err(bad(format!("principal point ({}, {}) outside image", k.cx, k.cy)));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho <= UNIT_TOL) || (r.determinant() - 1.0).abs() > UNIT_TOL {
            return Err(bad("rotation is not a proper orthonormal matrix".into()));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(bad("translation must be finite".into()));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`, image `y` pointing along
    /// the projection of `-up`.
    pub fn look_at(
        view_id: u32,
        width: usize,
        height: usize,
        intrinsics: Intrinsics,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(SceneError::InvalidCamera {
                view_id,
                reason: "up vector parallel to viewing direction".into(),
            });
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -rotation * eye;
        Self::new(view_id, width, height, intrinsics, rotation, translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    /// Unit viewing direction (optical axis) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Camera-space point with z-depth `depth` seen at pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth)
    }

    /// Pixel coordinates of a camera-space point (no cull).
    pub fn project_camera(&self, p: &Vector3<f64>) -> (f64, f64) {
        let k = &self.intrinsics;
        (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
    }

    /// World-space ray through pixel `(u, v)`: origin and unit direction.
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = self.unproject(u, v, 1.0);
        (self.center(), (self.rotation.transpose() * dir_cam).normalize())
    }

    pub fn world_to_camera_matrix(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub views: Vec<CameraView>,
}

impl Scene {
    pub fn view(&self, view_id: u32) -> Result<&CameraView, SceneError> {
        self.views
            .iter()
            .find(|v| v.view_id == view_id)
            .ok_or(SceneError::UnknownView(view_id))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.gaussians.iter().try_for_each(Gaussian3D::validate)?;
        self.views.iter().try_for_each(CameraView::validate)
    }
}

/// Number of raw optimizer parameters per Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Offsets of each parameter group inside a Gaussian's raw parameter block:
/// center (3), log-scale (3), quaternion `w,x,y,z` (4, unnormalized),
/// logit opacity (1), color (3).
pub mod param_layout {
    pub const CENTER: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

impl Gaussian3D {
    /// Raw optimizer parameters (log scale, unnormalized quaternion, logit opacity).
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let q = self.rotation.quaternion();
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.scale.x.ln(),
            self.scale.y.ln(),
            self.scale.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
            logit(self.opacity),
            self.color.x,
            self.color.y,
            self.color.z,
        ]
    }

    /// Inverse of [`Gaussian3D::to_params`]; the quaternion is normalized and
    /// colors are clamped into `[0, 1]`.
    pub fn from_params(p: &[f64]) -> Self {
        assert_eq!(p.len(), PARAMS_PER_GAUSSIAN);
        let q = Quaternion::new(p[6], p[7], p[8], p[9]);
        Self {
            center: Vector3::new(p[0], p[1], p[2]),
            scale: Vector3::new(p[3].exp(), p[4].exp(), p[5].exp()),
            rotation: UnitQuaternion::from_quaternion(q),
            opacity: sigmoid(p[10]),
            color: Vector3::new(p[11], p[12], p[13]).map(|c| c.clamp(0.0, 1.0)),
        }
    }
}
