//! Acceptance suite. Runs as a plain binary (no libtest harness) so that each
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatdiff::camera::Camera;
use splatdiff::gaussian::{compose_covariance_3d, quat_to_rotmat, Gaussian3D};
use splatdiff::gradcheck::{audit_scene, flatten_gradients, AuditCase, AuditOptions, ParamClass};
use splatdiff::linalg::frobenius_inner;
use splatdiff::loss::loss_and_gradients;
use splatdiff::optimize::{fit, random_scene, smoothed, FitConfig};
use splatdiff::projection::project_scene;
use splatdiff::raster_backward::backward_transmittances;
use splatdiff::raster_forward::{
    forward_transmittances, pixel_center, render, render_brute_force, RenderOptions,
};

const AUDIT_SEEDS: u64 = 20;
const RANDOM_CASES: usize = 1000;

struct Outcome {
    passed: bool,
    detail: String,
    /// Hash of every number the criterion produced, for the determinism check.
    fingerprint: u64,
}

fn hash_f64s<'a>(h: &mut DefaultHasher, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        v.to_bits().hash(h);
    }
}

fn hash_scene(h: &mut DefaultHasher, scene: &[Gaussian3D]) {
    for g in scene {
        hash_f64s(
            h,
            g.mean.iter().chain(&g.scale).chain(&g.quat).chain(&g.color),
        );
        g.opacity.to_bits().hash(h);
    }
}

fn gradient_audit() -> Outcome {
    let options = AuditOptions::default();
    let mut h = DefaultHasher::new();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..AUDIT_SEEDS {
        let case = AuditCase::generate(seed).expect("audit case");
        let report = audit_scene(&case, &options).expect("audit");
        for c in &report.classes {
            worst = worst.max(c.max_rel);
            c.max_rel.to_bits().hash(&mut h);
            c.max_abs.to_bits().hash(&mut h);
        }
        let grads = loss_and_gradients(
            &case.scene,
            &case.camera,
            &case.target,
            &case.render_options(),
        )
        .expect("gradients")
        .gradients;
        hash_f64s(&mut h, &flatten_gradients(&grads));
        if !report.passed {
            failures.push(format!("seed {seed}: {:?}", report.failed_classes()));
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{AUDIT_SEEDS} scenes, all classes, worst rel err {worst:.2e}")
        } else {
            failures.join("; ")
        },
        fingerprint: h.finish(),
    }
}

fn tiled_matches_brute_force() -> Outcome {
    let camera = Camera::centered(Matrix4::identity(), 70.0, 64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut h = DefaultHasher::new();
    let mut max_diff = 0.0f64;
    let mut bitwise_off = true;
    for i in 0..10 {
        let n = rng.random_range(1..=50);
        let scene = random_scene(&camera, n, 1000 + i);
        let bg = Vector3::from_fn(|_, _| rng.random());
        let mut options = RenderOptions::with_background(bg);
        let tiled = render(&scene, &camera, &options).unwrap().image;
        let (brute, _) = render_brute_force(&scene, &camera, &options).unwrap();
        for (a, b) in tiled.data.iter().zip(&brute.data) {
            max_diff = max_diff.max((a - b).abs());
        }
        hash_f64s(&mut h, &tiled.data);
        options.early_termination = false;
        let tiled = render(&scene, &camera, &options).unwrap().image;
        let (brute, _) = render_brute_force(&scene, &camera, &options).unwrap();
        bitwise_off &= tiled
            .data
            .iter()
            .zip(&brute.data)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        hash_f64s(&mut h, &tiled.data);
    }
    Outcome {
        passed: max_diff <= 1e-4 && bitwise_off,
        detail: format!(
            "10 scenes 64x64, max diff {max_diff:.2e} (early termination on), bitwise identical with it off: {bitwise_off}"
        ),
        fingerprint: h.finish(),
    }
}

fn transmittance_recurrence() -> Outcome {
    let mut h = DefaultHasher::new();
    let mut max_err = 0.0f64;
    let mut pixels = 0usize;
    let mut length_mismatch = 0usize;
    for seed in 0..AUDIT_SEEDS {
        let case = AuditCase::generate(seed).unwrap();
        let options = case.render_options();
        let out = render(&case.scene, &case.camera, &options).unwrap();
        for row in 0..case.camera.height {
            for col in 0..case.camera.width {
                let order = out.grid.bin_for_pixel(col, row);
                let p = pixel_center(col, row);
                let fwd = forward_transmittances(order, &out.projected, &case.scene, &p, &options);
                let bwd = backward_transmittances(
                    order,
                    &out.projected,
                    &case.scene,
                    &p,
                    out.aux.get(col, row),
                );
                if fwd.len() != bwd.len() {
                    length_mismatch += 1;
                    continue;
                }
                for (a, b) in fwd.iter().zip(&bwd) {
                    max_err = max_err.max((a - b).abs());
                }
                hash_f64s(&mut h, &bwd);
                pixels += 1;
            }
        }
    }
    Outcome {
        passed: max_err <= 1e-12 && length_mismatch == 0,
        detail: format!("{pixels} pixels, max |T_fwd - T_bwd| {max_err:.2e}, length mismatches {length_mismatch}"),
        fingerprint: h.finish(),
    }
}

fn random_quat(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    loop {
        let q = Vector4::from_fn(|_, _| rng.random_range(-2.0..2.0));
        if q.norm() > 1e-3 {
            return q;
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn algebraic_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut h = DefaultHasher::new();
    let mut failures = Vec::new();

    let mut ortho = 0.0f64;
    for _ in 0..RANDOM_CASES {
        let r = quat_to_rotmat(&random_quat(&mut rng)).unwrap();
        ortho = ortho.max(
            (r * r.transpose() - nalgebra::Matrix3::identity())
                .abs()
                .max(),
        );
        ortho = ortho.max((r.determinant() - 1.0).abs());
        hash_f64s(&mut h, r.iter());
    }
    if ortho > 1e-10 {
        failures.push(format!("orthonormality {ortho:.2e}"));
    }

    let mut min_eig = f64::INFINITY;
    for _ in 0..RANDOM_CASES {
        let scale = Vector3::from_fn(|_, _| 10f64.powf(rng.random_range(-3.0..1.0)));
        let sigma = compose_covariance_3d(&random_quat(&mut rng), &scale)
            .unwrap()
            .sigma;
        for e in sigma.symmetric_eigenvalues().iter() {
            min_eig = min_eig.min(*e);
        }
        hash_f64s(&mut h, sigma.iter());
    }
    let camera = Camera::centered(Matrix4::identity(), 70.0, 64, 64).unwrap();
    for i in 0..RANDOM_CASES / 10 {
        for p in project_scene(&random_scene(&camera, 10, 5000 + i as u64), &camera).unwrap() {
            let cov: Matrix2<f64> = p.cov2d;
            for e in cov.symmetric_eigenvalues().iter() {
                min_eig = min_eig.min(*e);
            }
        }
    }
    if min_eig < -1e-12 {
        failures.push(format!("PSD min eigenvalue {min_eig:.2e}"));
    }

    // Relative to the Cauchy-Schwarz bound of each side.
    let mut frob = 0.0f64;
    for _ in 0..RANDOM_CASES {
        let (m, n, k) = (
            rng.random_range(1..6),
            rng.random_range(1..6),
            rng.random_range(1..6),
        );
        let x = random_matrix(&mut rng, m, n);
        let y = random_matrix(&mut rng, m, n);
        let z = random_matrix(&mut rng, m, n);
        let a = random_matrix(&mut rng, m, k);
        let b = random_matrix(&mut rng, k, n);
        let ip = |p: &DMatrix<f64>, q: &DMatrix<f64>| frobenius_inner(p, q).unwrap();
        let rel = |l: f64, r: f64, bound: f64| (l - r).abs() / bound.max(f64::MIN_POSITIVE);
        let xy = x.norm() * y.norm();
        frob = frob.max(rel(ip(&x, &y), ip(&y, &x), xy));
        frob = frob.max(rel(ip(&x, &y), ip(&x.transpose(), &y.transpose()), xy));
        let xab = x.norm() * a.norm() * b.norm();
        let lhs = ip(&x, &(&a * &b));
        frob = frob.max(rel(lhs, ip(&(a.transpose() * &x), &b), xab));
        frob = frob.max(rel(lhs, ip(&(&x * b.transpose()), &a), xab));
        let sum = &y + &z;
        frob = frob.max(rel(
            ip(&x, &sum),
            ip(&x, &y) + ip(&x, &z),
            x.norm() * (y.norm() + z.norm()),
        ));
        lhs.to_bits().hash(&mut h);
    }
    if frob > 1e-9 {
        failures.push(format!("Frobenius identities {frob:.2e}"));
    }

    let small = Camera::centered(Matrix4::identity(), 18.0, 16, 16).unwrap();
    let mut monotone = true;
    let mut range_ok = true;
    for i in 0..RANDOM_CASES {
        let n = rng.random_range(1..12);
        let scene = random_scene(&small, n, 9000 + i as u64);
        let options = RenderOptions::with_background(Vector3::from_fn(|_, _| rng.random()));
        let out = render(&scene, &small, &options).unwrap();
        range_ok &= out.image.data.iter().all(|v| (0.0..=1.0).contains(v));
        for row in 0..16 {
            for col in 0..16 {
                let ts = forward_transmittances(
                    out.grid.bin_for_pixel(col, row),
                    &out.projected,
                    &scene,
                    &pixel_center(col, row),
                    &options,
                );
                let final_t = out.aux.get(col, row).final_t;
                monotone &= ts.first().is_none_or(|&t| t == 1.0);
                monotone &= ts.windows(2).all(|w| w[1] <= w[0]);
                monotone &= final_t > 0.0 && ts.last().is_none_or(|&t| final_t <= t);
            }
        }
        hash_f64s(&mut h, &out.image.data);
    }
    if !monotone {
        failures.push("transmittance monotonicity".into());
    }
    if !range_ok {
        failures.push("output channel range".into());
    }

    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(30) {
        failures.push(format!("runtime {elapsed:.1?} over 30s"));
    }
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "{RANDOM_CASES} cases each: orthonormality {ortho:.1e}, min eigenvalue {min_eig:.1e}, \
                 Frobenius rel {frob:.1e}, monotone T, range [0,1]; {elapsed:.1?}"
            )
        } else {
            failures.join("; ")
        },
        fingerprint: h.finish(),
    }
}

fn end_to_end_fit() -> Outcome {
    let start = Instant::now();
    let camera = Camera::centered(Matrix4::identity(), 70.0, 64, 64).unwrap();
    let config = FitConfig {
        n_gaussians: 100,
        iterations: 1000,
        seed: 42,
        ..FitConfig::default()
    };
    let hidden = random_scene(&camera, 100, 42);
    let target = render(
        &hidden,
        &camera,
        &RenderOptions::with_background(config.background),
    )
    .unwrap()
    .image;
    let result = fit(&target, &camera, &config).unwrap();
    let initial = result.loss_history[0];
    let reduction = 1.0 - result.final_loss / initial;
    let smooth = smoothed(&result.loss_history, 50);
    let upticks = smooth.windows(2).filter(|w| w[1] > w[0]).count();
    let mut h = DefaultHasher::new();
    hash_f64s(&mut h, &result.loss_history);
    hash_scene(&mut h, &result.scene);
    Outcome {
        passed: reduction >= 0.95 && upticks == 0,
        detail: format!(
            "loss {initial:.3} -> {:.3} ({:.2}% reduction), smoothed upticks {upticks}, {:.1?}",
            result.final_loss,
            100.0 * reduction,
            start.elapsed()
        ),
        fingerprint: h.finish(),
    }
}

fn fault_injection() -> Outcome {
    let mut failures = Vec::new();
    for class in ParamClass::ALL {
        for seed in 0..3 {
            let case = AuditCase::generate(seed).unwrap();
            let options = AuditOptions {
                fault: Some(class),
                ..AuditOptions::default()
            };
            let flagged = audit_scene(&case, &options).unwrap().failed_classes();
            if flagged != vec![class] {
                failures.push(format!("{class} on seed {seed} flagged {flagged:?}"));
            }
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "each of {} classes flagged alone on 3 scenes",
                ParamClass::ALL.len()
            )
        } else {
            failures.join("; ")
        },
        fingerprint: 0,
    }
}

fn criteria_one_to_five() -> Vec<Outcome> {
    vec![
        gradient_audit(),
        tiled_matches_brute_force(),
        transmittance_recurrence(),
        algebraic_invariants(),
        end_to_end_fit(),
    ]
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn report(index: usize, name: &str, outcome: &Outcome) -> bool {
    let status = if outcome.passed { "PASS" } else { "FAIL" };
    println!("criterion {index} [{status}] {name}: {}", outcome.detail);
    outcome.passed
}

fn main() {
    let names = [
        "gradient audit",
        "tiled vs brute-force render",
        "backward transmittance recurrence",
        "algebraic invariants",
        "end-to-end fit",
    ];
    let first = in_pool(4, criteria_one_to_five);
    let mut all_passed = true;
    for (i, (name, outcome)) in names.iter().zip(&first).enumerate() {
        all_passed &= report(i + 1, name, outcome);
    }

    let second = in_pool(4, criteria_one_to_five);
    let single = in_pool(1, criteria_one_to_five);
    let mut mismatches = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let base = first[i].fingerprint;
        if second[i].fingerprint != base {
            mismatches.push(format!("{name} differs between runs"));
        }
        if single[i].fingerprint != base {
            mismatches.push(format!("{name} differs between 4 and 1 threads"));
        }
    }
    let determinism = Outcome {
        passed: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            "criteria 1-5 bitwise identical across two runs and 1 vs 4 threads".into()
        } else {
            mismatches.join("; ")
        },
        fingerprint: 0,
    };
    all_passed &= report(6, "determinism", &determinism);
    all_passed &= report(7, "fault injection", &fault_injection());

    if !all_passed {
        std::process::exit(1);
    }
}
