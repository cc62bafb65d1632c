//! Front-to-back alpha compositing of depth-sorted splats.
//!
//! A splat touches a pixel only inside its 3σ ellipse (`σ ≤ 4.5`) and only
//! when its alpha reaches [`ALPHA_MIN`]. The ellipse sits inside the square
//! footprint used for binning, so the tiled renderer and the global-sort
//! renderer see the same per-pixel sequence and agree bit for bit.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::binning::{assign_tiles, depth_order, sort_bins, TileGrid};
use crate::camera::Camera;
use crate::error::{Result, SplatError};
use crate::gaussian::Gaussian3D;
use crate::projection::{project_scene, ProjectedGaussian};

/// Contributions below one 8-bit quantization step are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Alpha is clamped here so transmittance never reaches zero.
pub const ALPHA_MAX: f64 = 0.999;
/// Compositing stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;
/// `½ · 3²`: the Mahalanobis half-distance of the 3σ ellipse.
pub const SIGMA_CUTOFF: f64 = 4.5;

/// RGB image with `f64` channels, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        ImageBuffer::filled(width, height, Vector3::zeros())
    }

    pub fn filled(width: u32, height: u32, color: Vector3<f64>) -> Self {
        let n = (width * height) as usize;
        let mut data = Vec::with_capacity(3 * n);
        for _ in 0..n {
            data.extend_from_slice(color.as_slice());
        }
        ImageBuffer {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        let expected = 3 * (width * height) as usize;
        if data.len() != expected {
            return Err(SplatError::ShapeMismatch {
                expected: format!("{expected} channel values"),
                actual: format!("{}", data.len()),
            });
        }
        Ok(ImageBuffer {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, col: u32, row: u32) -> Vector3<f64> {
        let i = 3 * (row * self.width + col) as usize;
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_pixel(&mut self, col: u32, row: u32, c: Vector3<f64>) {
        let i = 3 * (row * self.width + col) as usize;
        self.data[i..i + 3].copy_from_slice(c.as_slice());
    }

    /// `Σ (self − other)²` over every channel.
    pub fn squared_error(&self, other: &ImageBuffer) -> Result<f64> {
        self.check_same_size(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub(crate) fn check_same_size(&self, other: &ImageBuffer) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(SplatError::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            });
        }
        Ok(())
    }
}

/// What the forward pass leaves behind for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelAux {
    /// Transmittance after the last processed splat.
    pub final_t: f64,
    /// Number of splats that contributed.
    pub n_contrib: u32,
    /// One past the position (in the pixel's sorted list) of the last
    /// contributor; the backward pass walks `end - 1 ..= 0`.
    pub end: u32,
}

impl Default for PixelAux {
    fn default() -> Self {
        PixelAux {
            final_t: 1.0,
            n_contrib: 0,
            end: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderAux {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<PixelAux>,
}

impl RenderAux {
    pub fn get(&self, col: u32, row: u32) -> &PixelAux {
        &self.pixels[(row * self.width + col) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: Vector3<f64>,
    pub early_termination: bool,
}

impl RenderOptions {
    pub fn with_background(background: Vector3<f64>) -> Self {
        RenderOptions {
            background,
            early_termination: true,
        }
    }
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions::with_background(Vector3::zeros())
    }
}

/// Everything the backward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: ImageBuffer,
    pub aux: RenderAux,
    pub grid: TileGrid,
    pub projected: Vec<ProjectedGaussian>,
}

/// One splat evaluated at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSample {
    /// Clamped alpha.
    pub alpha: f64,
    /// `pixel − μ'`
    pub delta: Vector2<f64>,
    /// `½ Δᵀ Σ'⁻¹ Δ`
    pub sigma: f64,
    /// `exp(−σ)`
    pub falloff: f64,
    /// Alpha hit [`ALPHA_MAX`]; its derivative w.r.t. opacity and shape is zero.
    pub clamped: bool,
}

pub fn pixel_center(col: u32, row: u32) -> Vector2<f64> {
    Vector2::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// `α = min(o · exp(−σ), ALPHA_MAX)`. `None` when the pixel lies outside the
/// 3σ ellipse or alpha is below [`ALPHA_MIN`].
pub fn eval_alpha(
    g: &ProjectedGaussian,
    opacity: f64,
    pixel: &Vector2<f64>,
) -> Option<AlphaSample> {
    let delta = pixel - g.mean2d;
    let sigma = 0.5 * delta.dot(&(g.conic * delta));
    if !(sigma <= SIGMA_CUTOFF) {
        return None;
    }
    let falloff = (-sigma).exp();
    let raw = opacity * falloff;
    if raw < ALPHA_MIN {
        return None;
    }
    let clamped = raw > ALPHA_MAX;
    Some(AlphaSample {
        alpha: if clamped { ALPHA_MAX } else { raw },
        delta,
        sigma,
        falloff,
        clamped,
    })
}

/// Walks `order` front to back, calling `visit(position, projected_index,
/// sample, T_before)` for each contributor. Returns the color before the
/// background term and the pixel's aux entry.
pub(crate) fn composite_walk(
    order: &[u32],
    projected: &[ProjectedGaussian],
    scene: &[Gaussian3D],
    pixel: &Vector2<f64>,
    early_termination: bool,
    mut visit: impl FnMut(usize, usize, &AlphaSample, f64),
) -> (Vector3<f64>, PixelAux) {
    let mut color = Vector3::zeros();
    let mut t = 1.0;
    let mut aux = PixelAux::default();
    for (pos, &idx) in order.iter().enumerate() {
        let g = &projected[idx as usize];
        let source = &scene[g.source_index];
        let Some(sample) = eval_alpha(g, source.opacity, pixel) else {
            continue;
        };
        visit(pos, idx as usize, &sample, t);
        color += source.color * (sample.alpha * t);
        t *= 1.0 - sample.alpha;
        aux.n_contrib += 1;
        aux.end = pos as u32 + 1;
        if early_termination && t < T_MIN {
            break;
        }
    }
    aux.final_t = t;
    (color, aux)
}

/// `C = Σ c_n α_n T_n + background · T_final` over one pixel's sorted list.
pub fn composite_pixel(
    order: &[u32],
    projected: &[ProjectedGaussian],
    scene: &[Gaussian3D],
    pixel: &Vector2<f64>,
    options: &RenderOptions,
) -> (Vector3<f64>, PixelAux) {
    let (color, aux) = composite_walk(
        order,
        projected,
        scene,
        pixel,
        options.early_termination,
        |_, _, _, _| {},
    );
    (color + options.background * aux.final_t, aux)
}

/// Transmittance in front of each contributor, in compositing order.
pub fn forward_transmittances(
    order: &[u32],
    projected: &[ProjectedGaussian],
    scene: &[Gaussian3D],
    pixel: &Vector2<f64>,
    options: &RenderOptions,
) -> Vec<f64> {
    let mut ts = Vec::new();
    composite_walk(
        order,
        projected,
        scene,
        pixel,
        options.early_termination,
        |_, _, _, t| ts.push(t),
    );
    ts
}

fn check_scene(scene: &[Gaussian3D], camera: &Camera) -> Result<()> {
    if camera.width == 0 || camera.height == 0 {
        return Err(SplatError::invalid("camera.width/height: must be >= 1"));
    }
    for (i, g) in scene.iter().enumerate() {
        if !(0.0..=1.0).contains(&g.opacity) {
            return Err(SplatError::invalid(format!(
                "gaussians[{i}].opacity: must lie in [0, 1], got {}",
                g.opacity
            )));
        }
    }
    Ok(())
}

/// Composites every pixel, row-parallel. `order_for(col, row)` supplies the
/// sorted list for a pixel.
fn composite_image<'a>(
    width: u32,
    height: u32,
    projected: &[ProjectedGaussian],
    scene: &[Gaussian3D],
    options: &RenderOptions,
    order_for: impl Fn(u32, u32) -> &'a [u32] + Sync,
) -> (ImageBuffer, RenderAux) {
    let rows: Vec<(Vec<f64>, Vec<PixelAux>)> = (0..height)
        .into_par_iter()
        .map(|row| {
            let mut colors = Vec::with_capacity(3 * width as usize);
            let mut auxes = Vec::with_capacity(width as usize);
            for col in 0..width {
                let (c, aux) = composite_pixel(
                    order_for(col, row),
                    projected,
                    scene,
                    &pixel_center(col, row),
                    options,
                );
                colors.extend_from_slice(c.as_slice());
                auxes.push(aux);
            }
            (colors, auxes)
        })
        .collect();
    let mut data = Vec::with_capacity(3 * (width * height) as usize);
    let mut pixels = Vec::with_capacity((width * height) as usize);
    for (c, a) in rows {
        data.extend(c);
        pixels.extend(a);
    }
    (
        ImageBuffer {
            width,
            height,
            data,
        },
        RenderAux {
            width,
            height,
            pixels,
        },
    )
}

/// Projection, tile binning, per-tile sort and compositing.
pub fn render(
    scene: &[Gaussian3D],
    camera: &Camera,
    options: &RenderOptions,
) -> Result<RenderOutput> {
    check_scene(scene, camera)?;
    let projected = project_scene(scene, camera)?;
    let grid = sort_bins(
        assign_tiles(&projected, camera.width, camera.height),
        &projected,
    );
    let (image, aux) = composite_image(
        camera.width,
        camera.height,
        &projected,
        scene,
        options,
        |col, row| grid.bin_for_pixel(col, row),
    );
    Ok(RenderOutput {
        image,
        aux,
        grid,
        projected,
    })
}

/// Reference renderer without tiles: one global depth sort, every pixel
/// composited against every projected splat.
pub fn render_brute_force(
    scene: &[Gaussian3D],
    camera: &Camera,
    options: &RenderOptions,
) -> Result<(ImageBuffer, RenderAux)> {
    check_scene(scene, camera)?;
    let projected = project_scene(scene, camera)?;
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| depth_order(&projected[a as usize], &projected[b as usize]));
    Ok(composite_image(
        camera.width,
        camera.height,
        &projected,
        scene,
        options,
        |_, _| order.as_slice(),
    ))
}
