//! Projection of a 3D Gaussian into a pixel-space 2D Gaussian (EWA splatting).

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector4};

use crate::camera::Camera;
use crate::error::{Result, SplatError};
use crate::gaussian::{compose_covariance_3d, Gaussian3D};

/// Added to both diagonal entries of every projected covariance (pixels²).
pub const COV2D_DILATION: f64 = 0.3;

/// Per-view quantities derived from one [`Gaussian3D`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Homogeneous camera-space point, `t_w = 1`.
    pub t_cam: Vector4<f64>,
    pub mean2d: Vector2<f64>,
    /// Dilated 2D covariance.
    pub cov2d: Matrix2<f64>,
    /// `cov2d⁻¹`
    pub conic: Matrix2<f64>,
    /// Camera-space `t_z`; also the sort key.
    pub depth: f64,
    /// Half-width of the square footprint, whole pixels.
    pub radius: f64,
    pub source_index: usize,
}

impl ProjectedGaussian {
    /// Axis-aligned footprint `[min, max]` in pixel coordinates.
    pub fn bounding_box(&self) -> (Vector2<f64>, Vector2<f64>) {
        let r = Vector2::repeat(self.radius);
        (self.mean2d - r, self.mean2d + r)
    }
}

/// `t = T_cw [μ 1]ᵀ`
pub fn world_to_camera(mean: &nalgebra::Vector3<f64>, camera: &Camera) -> Vector4<f64> {
    camera.view * mean.push(1.0)
}

/// Clip-space projection followed by the pixel mapping
/// `μ' = ((w t'_x / t'_w + 1) / 2 + c_x, (h t'_y / t'_w + 1) / 2 + c_y)`.
pub fn camera_to_pixel(t_cam: &Vector4<f64>, camera: &Camera) -> Result<Vector2<f64>> {
    let clip = camera.projection_matrix() * t_cam;
    let tw = clip[3];
    if !(tw.abs() >= 1e-12) {
        return Err(SplatError::DegenerateProjection(tw));
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    Ok(Vector2::new(
        (w * clip[0] / tw + 1.0) / 2.0 + camera.cx,
        (h * clip[1] / tw + 1.0) / 2.0 + camera.cy,
    ))
}

/// Jacobian of the perspective map `(f_x t_x / t_z, f_y t_y / t_z)` at `t_cam`.
pub fn projection_jacobian(t_cam: &Vector4<f64>, camera: &Camera) -> Result<Matrix2x3<f64>> {
    let (tx, ty, tz) = (t_cam[0], t_cam[1], t_cam[2]);
    if !(tz > 0.0) {
        return Err(SplatError::BehindCamera(tz));
    }
    let tz2 = tz * tz;
    Ok(Matrix2x3::new(
        camera.fx / tz,
        0.0,
        -camera.fx * tx / tz2,
        0.0,
        camera.fy / tz,
        -camera.fy * ty / tz2,
    ))
}

/// `Σ' = J R_cw Σ R_cwᵀ Jᵀ + dilation · I`
pub fn project_covariance(
    jacobian: &Matrix2x3<f64>,
    rotation: &Matrix3<f64>,
    sigma: &Matrix3<f64>,
) -> Matrix2<f64> {
    let t = jacobian * rotation;
    let cov = t * sigma * t.transpose();
    // Symmetrize so downstream code can rely on exact symmetry.
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    Matrix2::new(
        cov[(0, 0)] + COV2D_DILATION,
        off,
        off,
        cov[(1, 1)] + COV2D_DILATION,
    )
}

/// Larger eigenvalue of a symmetric 2×2 matrix.
pub(crate) fn max_eigenvalue_2x2(cov: &Matrix2<f64>) -> f64 {
    let (a, b, d) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let mid = 0.5 * (a + d);
    let half_gap = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mid + half_gap
}

/// `ceil(3 √λ_max)`, the half-width of a square enclosing the 3σ ellipse.
pub fn bounding_radius(cov2d: &Matrix2<f64>) -> Result<f64> {
    let det = cov2d.determinant();
    if !(det > 0.0 && cov2d[(0, 0)] > 0.0) {
        return Err(SplatError::DegenerateCovariance(det));
    }
    Ok((3.0 * max_eigenvalue_2x2(cov2d).sqrt()).ceil())
}

/// Full forward projection. `Ok(None)` means the Gaussian was culled: it lies
/// outside the open depth range `(near, far)` or its footprint misses the
/// image rectangle.
pub fn project_gaussian(
    g: &Gaussian3D,
    camera: &Camera,
    source_index: usize,
) -> Result<Option<ProjectedGaussian>> {
    let t_cam = world_to_camera(&g.mean, camera);
    let depth = t_cam[2];
    if !(depth > camera.near && depth < camera.far) {
        return Ok(None);
    }
    let bundle = compose_covariance_3d(&g.quat, &g.scale)?;
    let jacobian = projection_jacobian(&t_cam, camera)?;
    let cov2d = project_covariance(&jacobian, &camera.rotation(), &bundle.sigma);
    let mean2d = camera_to_pixel(&t_cam, camera)?;
    let radius = bounding_radius(&cov2d)?;

    let (w, h) = (camera.width as f64, camera.height as f64);
    if mean2d.x + radius < 0.0
        || mean2d.x - radius > w
        || mean2d.y + radius < 0.0
        || mean2d.y - radius > h
    {
        return Ok(None);
    }
    let conic = cov2d
        .try_inverse()
        .ok_or_else(|| SplatError::DegenerateCovariance(cov2d.determinant()))?;
    Ok(Some(ProjectedGaussian {
        t_cam,
        mean2d,
        cov2d,
        conic,
        depth,
        radius,
        source_index,
    }))
}

/// Projects every Gaussian, dropping culled ones. The result is ordered by
/// `source_index`.
pub fn project_scene(scene: &[Gaussian3D], camera: &Camera) -> Result<Vec<ProjectedGaussian>> {
    let mut out = Vec::with_capacity(scene.len());
    for (i, g) in scene.iter().enumerate() {
        if let Some(p) = project_gaussian(g, camera, i)? {
            out.push(p);
        }
    }
    Ok(out)
}
