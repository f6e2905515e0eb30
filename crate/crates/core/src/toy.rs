//! A small procedural scene with known geometry, colors, and fog, for tests
//! and benchmarks.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::io::{PointCloud, SceneBundle, SceneView};
use crate::raster::{render, RenderMode, RenderOptions};
use crate::scene::{Camera, GaussianCloud};
use crate::synth::synthesize_fog;

/// Colors that each have one channel at 0 and one at 1, so dark- and
/// bright-channel statistics hold on clear renders.
const PALETTE: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    /// Gaussians per side of the surface grid.
    pub grid: usize,
    /// Cells per side of one color block.
    pub block: usize,
    pub width: usize,
    pub height: usize,
    pub n_views: usize,
    pub beta: f64,
    pub light: [f64; 3],
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            block: 4,
            width: 128,
            height: 128,
            n_views: 12,
            beta: 0.8,
            light: [0.8; 3],
            seed: 0,
        }
    }
}

/// Ground truth and the derived dataset.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub cloud: GaussianCloud,
    pub cameras: Vec<Camera>,
    pub clear: Vec<ImagePlane>,
    pub depth: Vec<ImagePlane>,
    pub foggy: Vec<ImagePlane>,
    pub transmission: Vec<ImagePlane>,
    pub config: ToyConfig,
}

const U_RANGE: (f64, f64) = (-3.0, 4.6);
const V_HALF: f64 = 4.0;
const CENTER_DEPTH: f64 = 4.0;
const SLOPE: f64 = 0.6;
const ARC: f64 = 0.15;

fn surface(u: f64, v: f64) -> [f64; 3] {
    let bump = 0.12 * (2.5 * u).sin() * (1.7 * v).cos();
    [u, v, CENTER_DEPTH + SLOPE * u + bump]
}

/// A slanted, gently bumped wall of Gaussians in colored blocks, seen by a
/// horizontal arc of cameras.
pub fn toy_scene(config: &ToyConfig) -> Result<ToyScene> {
    if config.grid < 2 || config.block == 0 || config.n_views == 0 {
        return Err(Error::invalid("toy scene needs a grid of at least 2, a block size, and a view"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g = config.grid;
    let du = (U_RANGE.1 - U_RANGE.0) / (g - 1) as f64;
    let dv = 2.0 * V_HALF / (g - 1) as f64;
    let blocks = g.div_ceil(config.block);
    let block_colors: Vec<[f64; 3]> = (0..blocks * blocks)
        .map(|_| PALETTE[rng.random_range(0..PALETTE.len())])
        .collect();

    let mut positions = Vec::with_capacity(g * g);
    let mut colors = Vec::with_capacity(g * g);
    for j in 0..g {
        for i in 0..g {
            let u = U_RANGE.0 + i as f64 * du;
            let v = -V_HALF + j as f64 * dv;
            positions.push(surface(u, v));
            colors.push(block_colors[(j / config.block) * blocks + i / config.block]);
        }
    }
    let cloud = GaussianCloud::from_points(&positions, &colors, &vec![0.8 * du.max(dv); g * g], 0.98, 0)?;

    let target = Vector3::new(0.0, 0.0, CENTER_DEPTH);
    let cameras = (0..config.n_views)
        .map(|k| {
            let a = if config.n_views == 1 {
                0.0
            } else {
                -ARC + 2.0 * ARC * k as f64 / (config.n_views - 1) as f64
            };
            let eye = target + Vector3::new(a.sin(), 0.1 * (k % 3) as f64 - 0.1, -a.cos()) * CENTER_DEPTH;
            let focal = config.width as f64;
            Camera::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0), focal, config.width, config.height)
        })
        .collect::<Result<Vec<_>>>()?;

    let opts = RenderOptions::default();
    let mut clear = Vec::new();
    let mut depth = Vec::new();
    let mut foggy = Vec::new();
    let mut transmission = Vec::new();
    for cam in &cameras {
        let out = render(&cloud, cam, None, RenderMode::Clear, &opts)?;
        let (hazy, t) = synthesize_fog(&out.color, &out.depth, config.beta, config.light)?;
        clear.push(out.color);
        depth.push(out.depth);
        foggy.push(hazy);
        transmission.push(t);
    }
    Ok(ToyScene {
        cloud,
        cameras,
        clear,
        depth,
        foggy,
        transmission,
        config: config.clone(),
    })
}

impl ToyScene {
    /// Dataset view of the scene: foggy inputs, clear ground truth, rendered
    /// depth as pseudo-depth, and the Gaussian centers as points in gray.
    pub fn bundle(&self) -> SceneBundle {
        let views = self
            .cameras
            .iter()
            .enumerate()
            .map(|(k, cam)| SceneView {
                name: format!("view_{k:03}"),
                camera: cam.clone(),
                image: self.foggy[k].clone(),
                clear: Some(self.clear[k].clone()),
                depth: Some(self.depth[k].clone()),
            })
            .collect();
        SceneBundle {
            views,
            points: PointCloud {
                positions: self.cloud.positions.clone(),
                colors: Some(vec![[0.5; 3]; self.cloud.len()]),
            },
        }
    }
}

/// Initial Gaussians from a point cloud: isotropic scales from the mean
/// squared distance to the three nearest neighbours, opacity 0.1, and the
/// point colors (gray when absent).
pub fn init_from_points(points: &PointCloud, sh_degree: usize) -> Result<GaussianCloud> {
    let p = &points.positions;
    if p.is_empty() {
        return Err(Error::invalid("point cloud is empty"));
    }
    let scales: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut best = [f64::INFINITY; 3];
            for (j, b) in p.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d2 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
                if d2 < best[2] {
                    best[2] = d2;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
            let mean = if found.is_empty() {
                1.0
            } else {
                found.iter().sum::<f64>() / found.len() as f64
            };
            mean.max(1e-7).sqrt()
        })
        .collect();
    let colors = points.colors.clone().unwrap_or_else(|| vec![[0.5; 3]; p.len()]);
    GaussianCloud::from_points(p, &colors, &scales, 0.1, sh_degree)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_toy_is_covered_and_foggy() {
        let cfg = ToyConfig {
            grid: 16,
            block: 2,
            width: 32,
            height: 32,
            n_views: 3,
            ..ToyConfig::default()
        };
        let toy = toy_scene(&cfg).unwrap();
        assert_eq!(toy.cloud.len(), 256);
        for k in 0..3 {
            let out = render(&toy.cloud, &toy.cameras[k], None, RenderMode::Clear, &RenderOptions::default()).unwrap();
            assert!(out.alpha.data().iter().all(|&a| a > 0.99));
            let (lo, hi) = toy.transmission[k].min_max();
            assert!(lo < 0.5 && hi == 1.0);
        }
    }

    #[test]
    fn knn_scales() {
        let pts = PointCloud {
            positions: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]],
            colors: None,
        };
        let c = init_from_points(&pts, 0).unwrap();
        let expected = ((1.0 + 4.0 + 9.0) / 3.0f64).sqrt();
        assert!((c.log_scales[0][0].exp() - expected).abs() < 1e-12);
    }
}
