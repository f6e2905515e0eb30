#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fogsplat_core::fog::FogParams;
use fogsplat_core::optim::{Detached, Preset, TrainConfig, TrainView, Trainer};
use fogsplat_core::raster::{render_pass, RenderOptions, SceneGrads};
use fogsplat_core::{Camera, GaussianCloud, ImagePlane};

pub fn camera(size: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.3, -0.2, -4.0),
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.0, -1.0, 0.0),
        1.2 * size as f64,
        size,
        size,
    )
    .unwrap()
}

/// `n` Gaussians with random anisotropic shapes, rotations, opacities, and
/// SH colors, packed in front of [`camera`].
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, sh_degree: usize) -> GaussianCloud {
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.0..1.5),
            ]
        })
        .collect();
    let log_scales = (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-1.9f64..-0.6)))
        .collect();
    let rotations = (0..n)
        .map(|_| [0; 4].map(|_| rng.random_range(-1.0f64..1.0)))
        .map(|mut q: [f64; 4]| {
            q[0] += 1.5;
            q
        })
        .collect();
    let opacity_latents = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
    let k = (sh_degree + 1) * (sh_degree + 1);
    let color_coeffs = (0..n * k * 3)
        .map(|j| {
            if j % (k * 3) < 3 {
                rng.random_range(-1.5..1.5)
            } else {
                rng.random_range(-0.3..0.3)
            }
        })
        .collect();
    GaussianCloud::new(positions, log_scales, rotations, opacity_latents, color_coeffs, sh_degree).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, size: usize, channels: usize, lo: f64, hi: f64) -> ImagePlane {
    ImagePlane::from_fn(size, size, channels, |_, _, _| rng.random_range(lo..hi))
}

/// A one-view trainer on random data with every loss enabled.
pub fn small_trainer(seed: u64, n: usize, size: usize, sh_degree: usize, use_sigmoid: bool) -> Trainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = random_cloud(&mut rng, n, sh_degree);
    let image = random_image(&mut rng, size, 3, 0.1, 0.9);
    let depth = random_image(&mut rng, size, 1, 2.0, 6.0);
    let view = TrainView::new(camera(size), image, Some(depth)).unwrap();
    let mut cfg = TrainConfig::preset(Preset::Synthetic);
    cfg.iterations = 100;
    cfg.use_sigmoid = use_sigmoid;
    cfg.densify.enabled = false;
    cfg.prior_patch = 3;
    cfg.initial_beta = 0.7;
    cfg.initial_light = 0.75;
    cfg.background = [0.1, 0.2, 0.3];
    Trainer::new(cloud, vec![view], cfg).unwrap()
}

// Finite-difference checks of the total loss.

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Absolute slack for gradients that are zero up to rounding.
pub const GRAD_ABS_TOL: f64 = 1e-8;
pub const CHECK_ITER: usize = 10;

#[derive(Debug, Clone, Copy)]
pub enum Class {
    Position,
    LogScale,
    Rotation,
    Opacity,
    Color,
    Beta,
    Light,
}

pub fn count(tr: &Trainer, class: Class) -> usize {
    let n = tr.cloud.len();
    match class {
        Class::Position | Class::LogScale => 3 * n,
        Class::Rotation => 4 * n,
        Class::Opacity => n,
        Class::Color => tr.cloud.color_coeffs.len(),
        Class::Beta => 1,
        Class::Light => 3,
    }
}

pub fn param(tr: &mut Trainer, class: Class, j: usize) -> &mut f64 {
    match class {
        Class::Position => &mut tr.cloud.positions[j / 3][j % 3],
        Class::LogScale => &mut tr.cloud.log_scales[j / 3][j % 3],
        Class::Rotation => &mut tr.cloud.rotations[j / 4][j % 4],
        Class::Opacity => &mut tr.cloud.opacity_latents[j],
        Class::Color => &mut tr.cloud.color_coeffs[j],
        Class::Beta => &mut tr.fog.beta_weight,
        Class::Light => &mut tr.fog.atmos_latent[j],
    }
}

pub fn grad(g: &SceneGrads, class: Class, j: usize) -> f64 {
    match class {
        Class::Position => g.positions[j / 3][j % 3],
        Class::LogScale => g.log_scales[j / 3][j % 3],
        Class::Rotation => g.rotations[j / 4][j % 4],
        Class::Opacity => g.opacity_latents[j],
        Class::Color => g.color_coeffs[j],
        Class::Beta => g.beta_weight,
        Class::Light => g.atmos_latent[j],
    }
}

pub fn loss_at(tr: &mut Trainer, class: Class, j: usize, delta: f64, frozen: &Detached) -> f64 {
    let base = *param(tr, class, j);
    *param(tr, class, j) = base + delta;
    let l = tr.view_loss(0, CHECK_ITER, Some(frozen)).unwrap().report.total;
    *param(tr, class, j) = base;
    l
}

/// Largest relative error over every parameter of a class.
pub fn check_class(tr: &mut Trainer, class: Class) -> f64 {
    let base = tr.view_loss(0, CHECK_ITER, None).unwrap();
    let mut worst = 0.0f64;
    let mut nonzero = 0;
    for j in 0..count(tr, class) {
        let a = grad(&base.grads, class, j);
        let fd = (loss_at(tr, class, j, FD_STEP, &base.detached) - loss_at(tr, class, j, -FD_STEP, &base.detached)) / (2.0 * FD_STEP);
        let err = (a - fd).abs();
        assert!(
            err <= GRAD_REL_TOL * a.abs().max(fd.abs()) + GRAD_ABS_TOL,
            "{class:?}[{j}]: analytic {a:e}, finite difference {fd:e}"
        );
        if a.abs() > GRAD_ABS_TOL {
            nonzero += 1;
            worst = worst.max(err / a.abs().max(fd.abs()));
        }
    }
    assert!(nonzero > 0, "{class:?}: every gradient vanished");
    worst
}

pub const CLASSES: [Class; 7] = [
    Class::Position,
    Class::LogScale,
    Class::Rotation,
    Class::Opacity,
    Class::Color,
    Class::Beta,
    Class::Light,
];


// Brute-force compositor sharing no code with the tiled renderer.

const SH_C0: f64 = 0.282_094_791_773_878_14;

struct Splat {
    mean: [f64; 2],
    conic: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: [f64; 3],
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn project_all(cloud: &GaussianCloud, cam: &Camera) -> Vec<Splat> {
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        let [w, x, y, z] = cloud.rotations[i];
        let r = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::from(cloud.log_scales[i].map(f64::exp)));
        let sigma = r.matrix() * s * s * r.matrix().transpose();
        let p = cam.rotation * Vector3::from(cloud.positions[i]) + cam.translation;
        if p.z <= cam.near || p.z >= cam.far {
            continue;
        }
        let jac = Matrix2x3::new(
            cam.fx / p.z,
            0.0,
            -cam.fx * p.x / (p.z * p.z),
            0.0,
            cam.fy / p.z,
            -cam.fy * p.y / (p.z * p.z),
        );
        let cov = jac * cam.rotation * sigma * cam.rotation.transpose() * jac.transpose() + Matrix2::identity() * 0.3;
        let Some(conic) = cov.try_inverse() else { continue };
        let radius = 3.0 * cov.symmetric_eigenvalues().max().sqrt();
        let mean = [cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy];
        let (w_px, h_px) = (cam.width as f64, cam.height as f64);
        if mean[0] + radius < 0.0 || mean[0] - radius > w_px || mean[1] + radius < 0.0 || mean[1] - radius > h_px {
            continue;
        }
        let dc = &cloud.color_coeffs[i * cloud.coeffs_per_gaussian() * 3..][..3];
        out.push(Splat {
            mean,
            conic,
            depth: p.z,
            opacity: logistic(cloud.opacity_latents[i]),
            color: [0, 1, 2].map(|c| (0.5 + SH_C0 * dc[c]).max(0.0)),
        });
    }
    out
}

pub struct Maps {
    pub color: Vec<f64>,
    pub transmission: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn brute_force(cloud: &GaussianCloud, cam: &Camera, fog: Option<&FogParams>, bg: [f64; 3]) -> Maps {
    let mut splats = project_all(cloud, cam);
    // Stable sort keeps source order among equal depths.
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap());
    let (lo, hi) = splats
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| (l.min(s.depth), h.max(s.depth)));
    let t_of = |d: f64| -> f64 {
        let Some(f) = fog else { return 1.0 };
        let dn = if hi > lo { (d - lo) / (hi - lo) } else { 0.0 };
        let t = (-(f.beta_weight * dn).max(0.0)).exp();
        if f.use_sigmoid {
            logistic(t)
        } else {
            t
        }
    };
    let light = fog.map(|f| f.atmos_latent.map(logistic));
    let mut m = Maps {
        color: Vec::new(),
        transmission: Vec::new(),
        depth: Vec::new(),
        alpha: Vec::new(),
    };
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut rgb = [0.0; 3];
            let (mut tr, mut dz, mut trans) = (0.0, 0.0, 1.0);
            for s in &splats {
                let d = nalgebra::Vector2::new(px - s.mean[0], py - s.mean[1]);
                let maha = (d.transpose() * s.conic * d)[0];
                if maha > 9.0 {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * maha).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                if trans * (1.0 - alpha) < 1e-4 {
                    break;
                }
                let t = t_of(s.depth);
                for c in 0..3 {
                    let col = match light {
                        Some(a) => s.color[c] * t + a[c] * (1.0 - t),
                        None => s.color[c],
                    };
                    rgb[c] += col * alpha * trans;
                }
                tr += t * alpha * trans;
                dz += s.depth * alpha * trans;
                trans *= 1.0 - alpha;
            }
            for c in 0..3 {
                m.color.push(rgb[c] + bg[c] * trans);
            }
            m.transmission.push(tr);
            m.depth.push(dz);
            m.alpha.push(1.0 - trans);
        }
    }
    m
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn oracle_error(seed: u64, n: usize, tile_size: usize, fog: Option<FogParams>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = random_cloud(&mut rng, n, 0);
    let cam = camera(32);
    let opts = RenderOptions {
        tile_size,
        background: [0.2, 0.5, 0.9],
    };
    let out = render_pass(&cloud, &cam, fog.as_ref(), fog.is_some(), &opts).unwrap().output();
    let oracle = brute_force(&cloud, &cam, fog.as_ref(), opts.background);
    [
        max_diff(out.color.data(), &oracle.color),
        max_diff(out.transmission.data(), &oracle.transmission),
        max_diff(out.depth.data(), &oracle.depth),
        max_diff(out.alpha.data(), &oracle.alpha),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

