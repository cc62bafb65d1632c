//! Back-to-front propagation of pixel gradients to each splat's color,
//! opacity, 2D mean and 2D covariance.
//!
//! Nothing per (pixel, splat) is stored by the forward pass. The walk starts
//! from the saved final transmittance and rebuilds `T_n = T_{n+1} / (1 − α_n)`
//! while carrying the suffix sum `S_n = Σ_{m>n} c_m α_m T_m + bg · T_final`.

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Result, SplatError};
use crate::gaussian::Gaussian3D;
use crate::projection::ProjectedGaussian;
use crate::raster_forward::{
    eval_alpha, pixel_center, AlphaSample, ImageBuffer, PixelAux, RenderOutput,
};

/// Loss gradients with respect to one splat's image-space parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2DGrads {
    pub d_color: Vector3<f64>,
    pub d_opacity: f64,
    pub d_mean2d: Vector2<f64>,
    pub d_cov2d: Matrix2<f64>,
}

impl Default for Splat2DGrads {
    fn default() -> Self {
        Splat2DGrads {
            d_color: Vector3::zeros(),
            d_opacity: 0.0,
            d_mean2d: Vector2::zeros(),
            d_cov2d: Matrix2::zeros(),
        }
    }
}

impl std::ops::AddAssign<&Splat2DGrads> for Splat2DGrads {
    fn add_assign(&mut self, rhs: &Splat2DGrads) {
        self.d_color += rhs.d_color;
        self.d_opacity += rhs.d_opacity;
        self.d_mean2d += rhs.d_mean2d;
        self.d_cov2d += rhs.d_cov2d;
    }
}

/// Gradient of one contributor given `∂L/∂α` and its forward sample.
fn splat_grads(
    sample: &AlphaSample,
    conic: &Matrix2<f64>,
    opacity: f64,
    d_alpha: f64,
    d_color: Vector3<f64>,
) -> Splat2DGrads {
    if sample.clamped {
        // α = ALPHA_MAX does not move with opacity or shape.
        return Splat2DGrads {
            d_color,
            ..Splat2DGrads::default()
        };
    }
    let d_opacity = d_alpha * sample.falloff;
    let d_sigma = -d_alpha * opacity * sample.falloff;
    // Δ = pixel − μ', so ∂σ/∂μ' = −Σ'⁻¹Δ.
    let y_delta = conic * sample.delta;
    let d_mean2d = -y_delta * d_sigma;
    // ∂σ/∂Σ' = −½ Σ'⁻¹ΔΔᵀΣ'⁻¹; built from one vector so it is exactly symmetric.
    let d_cov2d = (y_delta * y_delta.transpose()) * (-0.5 * d_sigma);
    Splat2DGrads {
        d_color,
        d_opacity,
        d_mean2d,
        d_cov2d,
    }
}

/// Walks one pixel's contributors back to front, calling
/// `emit(projected_index, T_n, grads)` for each.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_walk(
    order: &[u32],
    projected: &[ProjectedGaussian],
    scene: &[Gaussian3D],
    pixel: &Vector2<f64>,
    aux: &PixelAux,
    d_pixel: &Vector3<f64>,
    background: &Vector3<f64>,
    mut emit: impl FnMut(usize, f64, Splat2DGrads),
) {
    let mut t = aux.final_t;
    let mut suffix = background * aux.final_t;
    for &idx in order[..aux.end as usize].iter().rev() {
        let g = &projected[idx as usize];
        let source = &scene[g.source_index];
        let Some(sample) = eval_alpha(g, source.opacity, pixel) else {
            continue;
        };
        let alpha = sample.alpha;
        t /= 1.0 - alpha;
        let d_color = d_pixel * (alpha * t);
        // ∂C_k/∂α = c_k T − S_k / (1 − α)
        let dc_dalpha = source.color * t - suffix / (1.0 - alpha);
        let d_alpha = d_pixel.dot(&dc_dalpha);
        suffix += source.color * (alpha * t);
        emit(
            idx as usize,
            t,
            splat_grads(&sample, &g.conic, source.opacity, d_alpha, d_color),
        );
    }
}

/// Per-splat gradient contributions from one pixel, in back-to-front order.
/// Indices refer to `projected`.
#[allow(clippy::too_many_arguments)]
pub fn composite_pixel_backward(
    order: &[u32],
    projected: &[ProjectedGaussian],
    scene: &[Gaussian3D],
    pixel: &Vector2<f64>,
    aux: &PixelAux,
    d_pixel: &Vector3<f64>,
    background: &Vector3<f64>,
) -> Vec<(usize, Splat2DGrads)> {
    let mut out = Vec::with_capacity(aux.n_contrib as usize);
    backward_walk(
        order,
        projected,
        scene,
        pixel,
        aux,
        d_pixel,
        background,
        |i, _, g| out.push((i, g)),
    );
    out
}

/// The transmittances rebuilt by the backward recurrence, in front-to-back
/// order so they line up with
/// [`forward_transmittances`](crate::raster_forward::forward_transmittances).
pub fn backward_transmittances(
    order: &[u32],
    projected: &[ProjectedGaussian],
    scene: &[Gaussian3D],
    pixel: &Vector2<f64>,
    aux: &PixelAux,
) -> Vec<f64> {
    let mut ts = Vec::with_capacity(aux.n_contrib as usize);
    let zero = Vector3::zeros();
    backward_walk(
        order,
        projected,
        scene,
        pixel,
        aux,
        &zero,
        &zero,
        |_, t, _| ts.push(t),
    );
    ts.reverse();
    ts
}

/// Sums every pixel's contributions into one [`Splat2DGrads`] per scene
/// Gaussian (culled ones stay zero).
///
/// Pixels are processed in parallel but added in row-major pixel order, so
/// the totals do not depend on the thread count.
pub fn accumulate_image_backward(
    render: &RenderOutput,
    scene: &[Gaussian3D],
    d_image: &ImageBuffer,
    background: &Vector3<f64>,
) -> Result<Vec<Splat2DGrads>> {
    render.image.check_same_size(d_image)?;
    if render.aux.pixels.len() != (d_image.width * d_image.height) as usize {
        return Err(SplatError::ShapeMismatch {
            expected: format!("{} aux entries", d_image.width * d_image.height),
            actual: format!("{}", render.aux.pixels.len()),
        });
    }
    let width = d_image.width;
    let rows: Vec<Vec<(u32, Splat2DGrads)>> = (0..d_image.height)
        .into_par_iter()
        .map(|row| {
            let mut row_out = Vec::new();
            for col in 0..width {
                let d_pixel = d_image.pixel(col, row);
                if d_pixel == Vector3::zeros() {
                    continue;
                }
                let order = render.grid.bin_for_pixel(col, row);
                backward_walk(
                    order,
                    &render.projected,
                    scene,
                    &pixel_center(col, row),
                    render.aux.get(col, row),
                    &d_pixel,
                    background,
                    |i, _, g| row_out.push((i as u32, g)),
                );
            }
            row_out
        })
        .collect();

    let mut totals = vec![Splat2DGrads::default(); scene.len()];
    for (idx, g) in rows.iter().flatten() {
        totals[render.projected[*idx as usize].source_index] += g;
    }
    Ok(totals)
}
