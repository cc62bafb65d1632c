//! Gradients of the projection: from `∂L/∂μ'` and `∂L/∂Σ'` back to the 3D
//! mean, scale, quaternion and the world-to-camera transform.

use nalgebra::{Matrix2, Matrix2x3, Matrix2x4, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Result, SplatError};
use crate::gaussian::{compose_covariance_3d, normalize_quat, Cov3DBundle, Gaussian3D};
use crate::projection::projection_jacobian;
use crate::raster_backward::accumulate_image_backward;
use crate::raster_forward::{ImageBuffer, RenderOutput};

/// Loss gradient for one Gaussian, field for field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianGrads {
    pub d_mean: Vector3<f64>,
    pub d_scale: Vector3<f64>,
    /// `(w, x, y, z)`
    pub d_quat: Vector4<f64>,
    pub d_opacity: f64,
    pub d_color: Vector3<f64>,
}

impl Default for GaussianGrads {
    fn default() -> Self {
        GaussianGrads {
            d_mean: Vector3::zeros(),
            d_scale: Vector3::zeros(),
            d_quat: Vector4::zeros(),
            d_opacity: 0.0,
            d_color: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub gaussians: Vec<GaussianGrads>,
    /// `∂L/∂T_cw`, the full 4×4; no projection onto rigid motions.
    pub d_view: Matrix4<f64>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        SceneGradients {
            gaussians: vec![GaussianGrads::default(); n],
            d_view: Matrix4::zeros(),
        }
    }
}

/// Contribution of `∂L/∂μ'` to `∂L/∂t`, through `t' = P t` and the pixel mapping.
pub fn mean2d_backward(
    d_mean2d: &Vector2<f64>,
    t_cam: &Vector4<f64>,
    camera: &Camera,
) -> Result<Vector4<f64>> {
    let p = camera.projection_matrix();
    let clip = p * t_cam;
    let tw = clip[3];
    if !(tw.abs() >= 1e-12) {
        return Err(SplatError::DegenerateProjection(tw));
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    let tw2 = tw * tw;
    // ∂μ'/∂t', one row per pixel axis
    let d_pixel_d_clip = Matrix2x4::new(
        w / tw,
        0.0,
        0.0,
        -w * clip[0] / tw2,
        0.0,
        h / tw,
        0.0,
        -h * clip[1] / tw2,
    ) * 0.5;
    Ok(p.transpose() * (d_pixel_d_clip.transpose() * d_mean2d))
}

/// Output of [`cov2d_backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2DBackward {
    /// `∂L/∂Σ`
    pub d_sigma: Matrix3<f64>,
    /// Contribution to `∂L/∂t` through `J(t)`.
    pub d_t: Vector4<f64>,
    /// Contribution to `∂L/∂R_cw` through `T = J R_cw`.
    pub d_rotation: Matrix3<f64>,
}

/// Backward of `Σ' = T Σ Tᵀ (+ dilation)` with `T = J R_cw`.
#[allow(clippy::too_many_arguments)]
pub fn cov2d_backward(
    d_cov2d: &Matrix2<f64>,
    t_proj: &Matrix2x3<f64>,
    sigma: &Matrix3<f64>,
    jacobian: &Matrix2x3<f64>,
    rotation: &Matrix3<f64>,
    t_cam: &Vector4<f64>,
    camera: &Camera,
) -> Cov2DBackward {
    let d_sigma = t_proj.transpose() * d_cov2d * t_proj;
    let d_t_proj = d_cov2d * t_proj * sigma.transpose() + d_cov2d.transpose() * t_proj * sigma;
    let d_j = d_t_proj * rotation.transpose();
    let d_rotation = jacobian.transpose() * d_t_proj;

    let (fx, fy) = (camera.fx, camera.fy);
    let (tx, ty, tz) = (t_cam[0], t_cam[1], t_cam[2]);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let dj_dtx = Matrix2x3::new(0.0, 0.0, -fx / tz2, 0.0, 0.0, 0.0);
    let dj_dty = Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -fy / tz2);
    let dj_dtz = Matrix2x3::new(
        -fx / tz2,
        0.0,
        2.0 * fx * tx / tz3,
        0.0,
        -fy / tz2,
        2.0 * fy * ty / tz3,
    );
    let d_t = Vector4::new(d_j.dot(&dj_dtx), d_j.dot(&dj_dty), d_j.dot(&dj_dtz), 0.0);
    Cov2DBackward {
        d_sigma,
        d_t,
        d_rotation,
    }
}

/// Backward of `t = T_cw [μ 1]ᵀ`: returns `(∂L/∂μ, ∂L/∂T_cw)`.
pub fn world_backward(
    d_t: &Vector4<f64>,
    camera: &Camera,
    mean: &Vector3<f64>,
) -> (Vector3<f64>, Matrix4<f64>) {
    let d_view = d_t * mean.push(1.0).transpose();
    let d_mean = camera.rotation().transpose() * d_t.xyz();
    (d_mean, d_view)
}

/// `∂R/∂w, ∂R/∂x, ∂R/∂y, ∂R/∂z` at a unit quaternion `(w, x, y, z)`.
pub fn rotation_jacobians(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

/// Backward of `Σ = M Mᵀ`, `M = R(q/‖q‖) diag(s)`: returns `(∂L/∂q, ∂L/∂s)`.
pub fn covariance3d_backward(
    d_sigma: &Matrix3<f64>,
    bundle: &Cov3DBundle,
    quat: &Vector4<f64>,
) -> Result<(Vector4<f64>, Vector3<f64>)> {
    let d_m = d_sigma * bundle.m + d_sigma.transpose() * bundle.m;
    let d_r = d_m * bundle.scale.transpose();
    let d_s = bundle.rotation.transpose() * d_m;
    let d_scale = d_s.diagonal();

    let unit = normalize_quat(quat)?;
    let jac = rotation_jacobians(&unit);
    let d_unit = Vector4::from_fn(|i, _| d_r.dot(&jac[i]));
    // through q ↦ q/‖q‖: (I − q̂q̂ᵀ)/‖q‖
    let d_quat = (d_unit - unit * unit.dot(&d_unit)) / quat.norm();
    Ok((d_quat, d_scale))
}

/// Full backward pass for `render(scene, camera)` given `∂L/∂image`.
pub fn scene_backward(
    scene: &[Gaussian3D],
    camera: &Camera,
    render: &RenderOutput,
    d_image: &ImageBuffer,
    background: &Vector3<f64>,
) -> Result<SceneGradients> {
    let splat_grads = accumulate_image_backward(render, scene, d_image, background)?;
    let rotation = camera.rotation();

    let per_gaussian: Vec<(usize, GaussianGrads, Matrix4<f64>)> = render
        .projected
        .par_iter()
        .map(|p| -> Result<_> {
            let g = &scene[p.source_index];
            let s = &splat_grads[p.source_index];
            let d_t_mean = mean2d_backward(&s.d_mean2d, &p.t_cam, camera)?;
            let bundle = compose_covariance_3d(&g.quat, &g.scale)?;
            let jacobian = projection_jacobian(&p.t_cam, camera)?;
            let t_proj = jacobian * rotation;
            let cov = cov2d_backward(
                &s.d_cov2d,
                &t_proj,
                &bundle.sigma,
                &jacobian,
                &rotation,
                &p.t_cam,
                camera,
            );
            let (d_mean, mut d_view) = world_backward(&(d_t_mean + cov.d_t), camera, &g.mean);
            let mut rot_block = d_view.fixed_view_mut::<3, 3>(0, 0);
            rot_block += cov.d_rotation;
            let (d_quat, d_scale) = covariance3d_backward(&cov.d_sigma, &bundle, &g.quat)?;
            Ok((
                p.source_index,
                GaussianGrads {
                    d_mean,
                    d_scale,
                    d_quat,
                    d_opacity: s.d_opacity,
                    d_color: s.d_color,
                },
                d_view,
            ))
        })
        .collect::<Result<_>>()?;

    let mut out = SceneGradients::zeros(scene.len());
    for (i, grads, d_view) in per_gaussian {
        out.gaussians[i] = grads;
        out.d_view += d_view;
    }
    Ok(out)
}
