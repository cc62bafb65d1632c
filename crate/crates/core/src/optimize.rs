//! Fitting a fixed set of Gaussians to a target image with Adam.
//!
//! Scale is optimized as `log s` and opacity as `logit o`, so the constraints
//! `s > 0` and `0 < o < 1` hold without projection. Colors are clamped to
//! `[0, 1]` after each step.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Result, SplatError};
use crate::gaussian::Gaussian3D;
use crate::gradcheck::GAUSSIAN_PARAMS;
use crate::loss::loss_and_gradients;
use crate::proj_backward::GaussianGrads;
use crate::raster_forward::{ImageBuffer, RenderOptions};

/// Per-class step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub mean: f64,
    pub log_scale: f64,
    pub quat: f64,
    pub opacity_logit: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            mean: 2e-3,
            log_scale: 5e-3,
            quat: 5e-3,
            opacity_logit: 2e-2,
            color: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub n_gaussians: usize,
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub seed: u64,
    pub background: Vector3<f64>,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Initial depths start this far beyond the near plane.
    pub depth_margin: f64,
    /// Initial depths span at most this far beyond the near plane.
    pub depth_span: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_gaussians: 100,
            iterations: 1000,
            learning_rates: LearningRates::default(),
            seed: 0,
            background: Vector3::zeros(),
            loss: LossKind::L2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            depth_margin: 2.9,
            depth_span: 5.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.learning_rates;
        let rates = [
            ("mean", lr.mean),
            ("log_scale", lr.log_scale),
            ("quat", lr.quat),
            ("opacity_logit", lr.opacity_logit),
            ("color", lr.color),
        ];
        for (name, rate) in rates {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(SplatError::invalid(format!(
                    "learning rate for {name} must be positive, got {rate}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(SplatError::invalid(format!(
                "moment decay rates must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(SplatError::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.depth_margin.is_finite() && self.depth_margin >= 0.0) {
            return Err(SplatError::invalid(format!(
                "depth_margin must be non-negative, got {}",
                self.depth_margin
            )));
        }
        if !(self.depth_span.is_finite() && self.depth_span > self.depth_margin) {
            return Err(SplatError::invalid(format!(
                "depth_span must exceed depth_margin, got {} <= {}",
                self.depth_span, self.depth_margin
            )));
        }
        if !self.background.iter().all(|c| c.is_finite()) {
            return Err(SplatError::invalid("background must be finite"));
        }
        Ok(())
    }

    fn depth_range(&self, camera: &Camera) -> (f64, f64) {
        let lo = camera.near + self.depth_margin;
        let hi = camera.far.min(camera.near + self.depth_span);
        (lo, hi)
    }
}

/// Camera-space point that projects to pixel coordinate `(u, v)` at depth `z`.
fn unproject(camera: &Camera, u: f64, v: f64, z: f64) -> Vector3<f64> {
    let tx = (u - 0.5 - camera.cx) * z / camera.fx;
    let ty = (v - 0.5 - camera.cy) * z / camera.fy;
    let world = camera.inverse_view() * Vector4::new(tx, ty, z, 1.0);
    world.xyz()
}

fn check_target(target: &ImageBuffer, camera: &Camera) -> Result<()> {
    if target.width != camera.width || target.height != camera.height {
        return Err(SplatError::ShapeMismatch {
            expected: format!("{}x{}", camera.width, camera.height),
            actual: format!("{}x{}", target.width, target.height),
        });
    }
    Ok(())
}

/// Seeded starting scene: each Gaussian is isotropic, sits on a uniformly
/// drawn pixel at a uniformly drawn depth, takes the target's color there and
/// has opacity ½. Its standard deviation is half the side of an `area / n`
/// pixel square.
pub fn init_random(
    config: &FitConfig,
    camera: &Camera,
    target: &ImageBuffer,
) -> Result<Vec<Gaussian3D>> {
    config.validate()?;
    camera.validate()?;
    check_target(target, camera)?;
    if config.n_gaussians == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (camera.width as f64, camera.height as f64);
    let (z_lo, z_hi) = config.depth_range(camera);
    let sigma_px = (w * h / config.n_gaussians as f64).sqrt() / 2.0;
    let scene = (0..config.n_gaussians)
        .map(|_| {
            let u = rng.random_range(0.0..w);
            let v = rng.random_range(0.0..h);
            let z = rng.random_range(z_lo..z_hi);
            let color = target.pixel(u as u32, v as u32);
            let scale = sigma_px * z / camera.fx.max(camera.fy);
            Gaussian3D::isotropic(unproject(camera, u, v, z), scale, 0.5, color)
        })
        .collect();
    Ok(scene)
}

/// A random anisotropic scene in front of `camera`, for synthesizing targets.
pub fn random_scene(camera: &Camera, n: usize, seed: u64) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (camera.width as f64, camera.height as f64);
    let z_lo = camera.near + 2.9;
    let z_hi = camera.far.min(z_lo + 2.0);
    let sigma_px = (w * h / n.max(1) as f64).sqrt() / 2.0;
    (0..n)
        .map(|_| {
            let u = rng.random_range(0.0..w);
            let v = rng.random_range(0.0..h);
            let z = rng.random_range(z_lo..z_hi);
            let base = sigma_px * z / camera.fx.max(camera.fy);
            let scale = Vector3::from_fn(|_, _| base * rng.random_range(0.4..1.6));
            let quat = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            Gaussian3D {
                mean: unproject(camera, u, v, z),
                scale,
                quat,
                opacity: rng.random_range(0.3..0.95),
                color: Vector3::from_fn(|_, _| rng.random()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub scene: Vec<Gaussian3D>,
    /// Loss before each update, one entry per iteration.
    pub loss_history: Vec<f64>,
    /// Loss of the returned scene.
    pub final_loss: f64,
}

/// Gradients in the optimized coordinates, flattened in parameter order.
fn reparam_gradient(g: &Gaussian3D, d: &GaussianGrads, out: &mut [f64]) {
    out[0..3].copy_from_slice(d.d_mean.as_slice());
    for k in 0..3 {
        out[3 + k] = g.scale[k] * d.d_scale[k];
    }
    out[6..10].copy_from_slice(d.d_quat.as_slice());
    out[10] = g.opacity * (1.0 - g.opacity) * d.d_opacity;
    out[11..14].copy_from_slice(d.d_color.as_slice());
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(o: f64) -> f64 {
    (o / (1.0 - o)).ln()
}

/// Apply one set of per-parameter steps (already scaled by learning rates)
/// in the optimized coordinates.
fn apply_step(g: &mut Gaussian3D, step: &[f64]) {
    for k in 0..3 {
        g.mean[k] -= step[k];
        g.scale[k] *= (-step[3 + k]).exp();
        g.color[k] = (g.color[k] - step[11 + k]).clamp(0.0, 1.0);
    }
    for k in 0..4 {
        g.quat[k] -= step[6 + k];
    }
    g.opacity = sigmoid(logit(g.opacity) - step[10]);
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Turns `grad` into the bias-corrected step direction `m̂ / (√v̂ + ε)`, in place.
    fn direction(&mut self, grad: &mut [f64], config: &FitConfig) {
        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((g, m), v) in grad.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * *g;
            *v = b2 * *v + (1.0 - b2) * *g * *g;
            *g = (*m / c1) / ((*v / c2).sqrt() + config.epsilon);
        }
    }
}

fn class_rates(rates: &LearningRates) -> [f64; GAUSSIAN_PARAMS] {
    let mut out = [0.0; GAUSSIAN_PARAMS];
    out[0..3].fill(rates.mean);
    out[3..6].fill(rates.log_scale);
    out[6..10].fill(rates.quat);
    out[10] = rates.opacity_logit;
    out[11..14].fill(rates.color);
    out
}

/// Fit from a seeded random initialization.
pub fn fit(target: &ImageBuffer, camera: &Camera, config: &FitConfig) -> Result<FitResult> {
    let initial = init_random(config, camera, target)?;
    fit_from(initial, target, camera, config)
}

/// Fit starting from a given scene; `config.n_gaussians` and `config.seed`
/// are ignored.
pub fn fit_from(
    initial: Vec<Gaussian3D>,
    target: &ImageBuffer,
    camera: &Camera,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_target(target, camera)?;
    let options = RenderOptions::with_background(config.background);
    let rates = class_rates(&config.learning_rates);
    let mut scene = initial;
    let mut adam = Adam::new(scene.len() * GAUSSIAN_PARAMS);
    let mut grad = vec![0.0; scene.len() * GAUSSIAN_PARAMS];
    let mut loss_history = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let eval = loss_and_gradients(&scene, camera, target, &options)?;
        if !eval.loss.is_finite() {
            return Err(SplatError::NonFiniteLoss {
                iteration,
                value: eval.loss,
            });
        }
        loss_history.push(eval.loss);
        for ((g, d), out) in scene
            .iter()
            .zip(&eval.gradients.gaussians)
            .zip(grad.chunks_exact_mut(GAUSSIAN_PARAMS))
        {
            reparam_gradient(g, d, out);
        }
        adam.direction(&mut grad, config);
        for (g, step) in scene.iter_mut().zip(grad.chunks_exact_mut(GAUSSIAN_PARAMS)) {
            for (s, rate) in step.iter_mut().zip(&rates) {
                *s *= rate;
            }
            apply_step(g, step);
        }
    }

    let final_loss = crate::loss::scene_loss(&scene, camera, target, &options)?;
    if !final_loss.is_finite() {
        return Err(SplatError::NonFiniteLoss {
            iteration: config.iterations,
            value: final_loss,
        });
    }
    Ok(FitResult {
        scene,
        loss_history,
        final_loss,
    })
}

/// Trailing moving average with the given window; entry `i` averages
/// `history[i + 1 - window ..= i]`. Empty when the history is shorter than
/// the window.
pub fn smoothed(history: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || history.len() < window {
        return Vec::new();
    }
    history
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}
