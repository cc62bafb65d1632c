use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Result, SplatError};

/// Pinhole camera: world-to-camera rigid transform, intrinsics in pixels,
/// image size and clip planes.
///
/// Fields are public so that gradient probes can perturb the view matrix off
/// the rigid manifold; [`Camera::new`] and [`Camera::validate`] enforce the
/// invariants for everything that comes from outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// `T_cw`, world to camera.
    pub view: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        view: Matrix4<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let camera = Camera {
            view,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Camera whose optical axis lands on the middle of the image.
    ///
    /// The pixel mapping adds `½` before the principal point, so a centered
    /// axis needs `c = (size - 1) / 2`.
    pub fn centered(view: Matrix4<f64>, focal: f64, width: u32, height: u32) -> Result<Self> {
        Camera::new(
            view,
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            0.1,
            100.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.view.iter().any(|v| !v.is_finite()) {
            return Err(SplatError::invalid("camera.view: non-finite entry"));
        }
        let bottom = self.view.fixed_view::<1, 4>(3, 0);
        if bottom != nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0) {
            return Err(SplatError::invalid(
                "camera.view: bottom row must be [0, 0, 0, 1]",
            ));
        }
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(SplatError::invalid(
                "camera.view: rotation block must be orthonormal with determinant +1",
            ));
        }
        if !(self.near > 0.0 && self.near < self.far) || !self.far.is_finite() {
            return Err(SplatError::invalid(format!(
                "camera.near/far: need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SplatError::invalid("camera.width/height: must be >= 1"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(SplatError::invalid(
                "camera.fx/fy: focal lengths must be > 0",
            ));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(SplatError::invalid(
                "camera.cx/cy: non-finite principal point",
            ));
        }
        Ok(())
    }

    /// `R_cw`
    pub fn rotation(&self) -> Matrix3<f64> {
        self.view.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// `t_cw`
    pub fn translation(&self) -> Vector3<f64> {
        self.view.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera-to-world transform, assuming the rotation block is orthonormal.
    pub fn inverse_view(&self) -> Matrix4<f64> {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut inv = Matrix4::identity();
        inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        inv
    }

    /// Camera space to clip space.
    pub fn projection_matrix(&self) -> Matrix4<f64> {
        let (w, h) = (self.width as f64, self.height as f64);
        let (n, f) = (self.near, self.far);
        Matrix4::new(
            2.0 * self.fx / w,
            0.0,
            0.0,
            0.0,
            0.0,
            2.0 * self.fy / h,
            0.0,
            0.0,
            0.0,
            0.0,
            (f + n) / (f - n),
            -2.0 * f * n / (f - n),
            0.0,
            0.0,
            1.0,
            0.0,
        )
    }
}

/// Rigid transform from a rotation and translation.
pub fn rigid_transform(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}
