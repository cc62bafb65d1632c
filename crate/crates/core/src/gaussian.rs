//! The splat primitive and the quaternion/scale to covariance kernels shared by
//! the forward and backward passes.

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Result, SplatError};

/// Quaternions with a norm below this are rejected.
pub const MIN_QUAT_NORM: f64 = 1e-12;

/// One splat's optimizable parameters.
///
/// The quaternion is stored as `(w, x, y, z)` and is normalized on use, not on
/// storage, so optimizers may step it freely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub quat: Vector4<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    /// Isotropic, axis-aligned splat.
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Gaussian3D {
            mean,
            scale: Vector3::repeat(scale),
            quat: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity,
            color,
        }
    }

    /// Checks the stored-parameter invariants. `field` is used as the prefix of
    /// the offending field's name in the error message, e.g. `gaussians[3]`.
    pub fn validate(&self, field: &str) -> Result<()> {
        let finite = self.mean.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.quat.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.opacity.is_finite();
        if !finite {
            return Err(SplatError::invalid(format!(
                "{field}: non-finite parameter"
            )));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(SplatError::invalid(format!(
                "{field}.scale: components must be > 0, got {:?}",
                self.scale.as_slice()
            )));
        }
        if self.quat.norm() <= MIN_QUAT_NORM {
            return Err(SplatError::invalid(format!(
                "{field}.quat: zero-norm quaternion"
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(SplatError::invalid(format!(
                "{field}.opacity: must lie in [0, 1], got {}",
                self.opacity
            )));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SplatError::invalid(format!(
                "{field}.color: channels must lie in [0, 1], got {:?}",
                self.color.as_slice()
            )));
        }
        Ok(())
    }
}

/// Everything computed on the way from `(quat, scale)` to the 3D covariance.
/// The backward pass reuses `rotation` and `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov3DBundle {
    pub rotation: Matrix3<f64>,
    pub scale: Matrix3<f64>,
    /// `rotation * scale`
    pub m: Matrix3<f64>,
    /// `m * mᵀ`
    pub sigma: Matrix3<f64>,
}

/// Normalizes a `(w, x, y, z)` quaternion, rejecting near-zero norms.
pub fn normalize_quat(quat: &Vector4<f64>) -> Result<Vector4<f64>> {
    let norm = quat.norm();
    if !(norm > MIN_QUAT_NORM) {
        return Err(SplatError::invalid(format!(
            "quaternion norm {norm:e} is degenerate"
        )));
    }
    Ok(quat / norm)
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`; no normalization.
pub(crate) fn unit_quat_to_rotmat(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix for the quaternion `(w, x, y, z)` after normalizing it.
pub fn quat_to_rotmat(quat: &Vector4<f64>) -> Result<Matrix3<f64>> {
    Ok(unit_quat_to_rotmat(&normalize_quat(quat)?))
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)`.
pub fn compose_covariance_3d(quat: &Vector4<f64>, scale: &Vector3<f64>) -> Result<Cov3DBundle> {
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(SplatError::invalid(format!(
            "scale components must be > 0, got {:?}",
            scale.as_slice()
        )));
    }
    let rotation = quat_to_rotmat(quat)?;
    let scale = Matrix3::from_diagonal(scale);
    let m = rotation * scale;
    let sigma = m * m.transpose();
    Ok(Cov3DBundle {
        rotation,
        scale,
        m,
        sigma,
    })
}
