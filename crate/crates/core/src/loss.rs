//! The photometric L2 loss and its image gradient.

use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::Gaussian3D;
use crate::proj_backward::{scene_backward, SceneGradients};
use crate::raster_forward::{render, ImageBuffer, RenderOptions, RenderOutput};

/// `Σ ‖C − C_target‖²` over all pixels and channels.
pub fn l2_loss(image: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    image.squared_error(target)
}

/// `∂L/∂C = 2 (C − C_target)`
pub fn l2_loss_grad(image: &ImageBuffer, target: &ImageBuffer) -> Result<ImageBuffer> {
    image.check_same_size(target)?;
    let data = image
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| 2.0 * (a - b))
        .collect();
    ImageBuffer::from_data(image.width, image.height, data)
}

/// Loss plus every analytic gradient, from one render.
pub struct LossEvaluation {
    pub loss: f64,
    pub gradients: SceneGradients,
    pub render: RenderOutput,
}

pub fn loss_and_gradients(
    scene: &[Gaussian3D],
    camera: &Camera,
    target: &ImageBuffer,
    options: &RenderOptions,
) -> Result<LossEvaluation> {
    let out = render(scene, camera, options)?;
    let loss = l2_loss(&out.image, target)?;
    let d_image = l2_loss_grad(&out.image, target)?;
    let gradients = scene_backward(scene, camera, &out, &d_image, &options.background)?;
    Ok(LossEvaluation {
        loss,
        gradients,
        render: out,
    })
}

/// Loss only.
pub fn scene_loss(
    scene: &[Gaussian3D],
    camera: &Camera,
    target: &ImageBuffer,
    options: &RenderOptions,
) -> Result<f64> {
    l2_loss(&render(scene, camera, options)?.image, target)
}
