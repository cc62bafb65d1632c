//! Differentiable 3D Gaussian splatting on the CPU.
//!
//! The forward renderer projects Gaussians to 2D splats ([`projection`]), bins
//! them into tiles ([`binning`]) and alpha-composites each pixel front to back
//! ([`raster_forward`]). The backward pass ([`raster_backward`],
//! [`proj_backward`]) returns analytic gradients for every Gaussian parameter
//! and the camera view matrix; [`gradcheck`] audits them against central
//! differences and [`optimize`] uses them to fit an image.
//!
//! ```
//! use nalgebra::{Matrix4, Vector3};
//! use splatdiff::camera::Camera;
//! use splatdiff::gaussian::Gaussian3D;
//! use splatdiff::loss::loss_and_gradients;
//! use splatdiff::raster_forward::{ImageBuffer, RenderOptions};
//!
//! let camera = Camera::centered(Matrix4::identity(), 20.0, 16, 16)?;
//! let scene = vec![Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.2, 0.7, Vector3::new(0.2, 0.9, 0.4))];
//! let target = ImageBuffer::new(16, 16);
//! let eval = loss_and_gradients(&scene, &camera, &target, &RenderOptions::default())?;
//! // darkening the splat moves toward the black target
//! assert!(eval.gradients.gaussians[0].d_opacity > 0.0);
//! # Ok::<(), splatdiff::error::SplatError>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binning;
pub mod camera;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod optimize;
pub mod proj_backward;
pub mod projection;
pub mod raster_backward;
pub mod raster_forward;

pub use camera::Camera;
pub use error::{Result, SplatError};
pub use gaussian::Gaussian3D;
pub use raster_forward::{render, ImageBuffer, RenderOptions};

// The book's chapters and the README, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussians.md")]
    mod gaussians {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/rasterization.md")]
    mod rasterization {}
    #[doc = include_str!("../../../book/src/raster_backward.md")]
    mod raster_backward {}
    #[doc = include_str!("../../../book/src/proj_backward.md")]
    mod proj_backward {}
    #[doc = include_str!("../../../book/src/gradcheck.md")]
    mod gradcheck {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
