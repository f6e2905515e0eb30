use crate::error::{Error, Result};
use crate::fog::{self, FogParams};
use crate::image::ImagePlane;
use crate::scene::{build_covariance_backward, sigmoid, Camera, GaussianCloud};
use crate::sh;

use super::composite::{composite_backward, composite_forward, CompositeOutput};
use super::project::{project, project_backward, ProjectedGaussian, ProjectedGrad};
use super::tiles::{bin_and_sort, TileBins, DEFAULT_TILE_SIZE};

/// Blended channels: RGB, transmission, camera depth.
pub const N_CHANNELS: usize = 5;
const CH_T: usize = 3;
const CH_Z: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Foggy,
    Clear,
    Transmission,
    Depth,
}

impl std::str::FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "foggy" => Ok(RenderMode::Foggy),
            "clear" => Ok(RenderMode::Clear),
            "transmission" => Ok(RenderMode::Transmission),
            "depth" => Ok(RenderMode::Depth),
            other => Err(Error::invalid(format!("unknown render mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Color behind all splats. Auxiliary maps always composite against 0.
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            background: [0.0; 3],
        }
    }
}

/// All maps produced by one render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: ImagePlane,
    pub depth: ImagePlane,
    pub transmission: ImagePlane,
    pub alpha: ImagePlane,
    pub n_contrib: Vec<u32>,
}

/// Upstream gradients on the rendered maps. Missing maps contribute nothing.
#[derive(Debug, Clone, Default)]
pub struct RenderGrads {
    pub color: Option<ImagePlane>,
    pub transmission: Option<ImagePlane>,
    pub depth: Option<ImagePlane>,
    pub alpha: Option<ImagePlane>,
}

/// Gradients on every learnable quantity, indexed like the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrads {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_latents: Vec<f64>,
    pub color_coeffs: Vec<f64>,
    pub beta_weight: f64,
    pub atmos_latent: [f64; 3],
    /// Screen-space mean gradient, px units (densification statistic).
    pub mean2d: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl SceneGrads {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacity_latents: vec![0.0; n],
            color_coeffs: vec![0.0; cloud.color_coeffs.len()],
            beta_weight: 0.0,
            atmos_latent: [0.0; 3],
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }
}

/// Everything a render computed, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub camera: Camera,
    pub projected: Vec<ProjectedGaussian>,
    pub bins: TileBins,
    pub opacities: Vec<f64>,
    pub clear_colors: Vec<[f64; 3]>,
    pub view_dirs: Vec<[f64; 3]>,
    pub depth_norm: Vec<f64>,
    pub channels: Vec<f64>,
    pub background: [f64; N_CHANNELS],
    pub fog: Option<FogParams>,
    /// Whether the color channels carry foggy (true) or clear colors.
    pub foggy: bool,
    pub composite: CompositeOutput,
    sh_degree: usize,
    n_gaussians: usize,
}

/// Projects, applies the fog model per Gaussian, bins, and composites.
///
/// With `foggy` the color channels hold `G_c·t + A·(1 − t)`; otherwise the
/// clear colors are splatted directly. Without fog parameters the
/// transmission channel is 1.
pub fn render_pass(
    cloud: &GaussianCloud,
    camera: &Camera,
    fog: Option<&FogParams>,
    foggy: bool,
    options: &RenderOptions,
) -> Result<ForwardPass> {
    render_pass_frozen(cloud, camera, fog, foggy, options, None)
}

/// Values that carry no gradient, indexed by Gaussian. Passing them back in
/// replays a render with those inputs held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenInputs {
    pub depth_norm: Vec<f64>,
    pub view_dirs: Vec<[f64; 3]>,
}

/// [`render_pass`] with normalized depths and view directions taken from
/// `frozen` instead of recomputed.
pub fn render_pass_frozen(
    cloud: &GaussianCloud,
    camera: &Camera,
    fog: Option<&FogParams>,
    foggy: bool,
    options: &RenderOptions,
    frozen: Option<&FrozenInputs>,
) -> Result<ForwardPass> {
    if let Some(fz) = frozen {
        if fz.depth_norm.len() != cloud.len() || fz.view_dirs.len() != cloud.len() {
            return Err(Error::shape("frozen inputs do not match the cloud"));
        }
    }
    if foggy && fog.is_none() {
        return Err(Error::invalid("foggy rendering needs fog parameters"));
    }
    cloud.validate()?;
    let projected = project(cloud, camera)?;
    let n = projected.len();
    let center = camera.center();

    let mut opacities = Vec::with_capacity(n);
    let mut clear_colors = Vec::with_capacity(n);
    let mut view_dirs = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    for pg in &projected {
        let i = pg.source_index;
        opacities.push(sigmoid(cloud.opacity_latents[i]));
        let p = cloud.positions[i];
        let d = [p[0] - center.x, p[1] - center.y, p[2] - center.z];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
        let dir = match frozen {
            Some(fz) => fz.view_dirs[i],
            None => d.map(|v| v / len),
        };
        clear_colors.push(sh::eval(cloud.sh_degree(), cloud.coeffs(i), dir));
        view_dirs.push(dir);
        depths.push(pg.camera_depth);
    }

    let depth_norm = match frozen {
        Some(fz) => projected.iter().map(|pg| fz.depth_norm[pg.source_index]).collect(),
        None => fog::normalize_depths(&depths),
    };
    let transmission = match fog {
        Some(f) => fog::gaussian_transmission(&depth_norm, f),
        None => vec![1.0; n],
    };
    let colors = match (fog, foggy) {
        (Some(f), true) => fog::fog_colors(&clear_colors, &transmission, f),
        _ => clear_colors.clone(),
    };

    let mut channels = Vec::with_capacity(n * N_CHANNELS);
    for k in 0..n {
        channels.extend_from_slice(&colors[k]);
        channels.push(transmission[k]);
        channels.push(projected[k].camera_depth);
    }
    let bg = options.background;
    let background = [bg[0], bg[1], bg[2], 0.0, 0.0];

    let bins = bin_and_sort(&projected, camera.width, camera.height, options.tile_size);
    let composite = composite_forward(&bins, &projected, &opacities, &channels, &background)?;

    Ok(ForwardPass {
        camera: camera.clone(),
        projected,
        bins,
        opacities,
        clear_colors,
        view_dirs,
        depth_norm,
        channels,
        background,
        fog: fog.cloned(),
        foggy,
        composite,
        sh_degree: cloud.sh_degree(),
        n_gaussians: cloud.len(),
    })
}

impl ForwardPass {
    /// The gradient-free inputs of this pass; Gaussians that were not
    /// projected get zeros.
    pub fn frozen_inputs(&self) -> FrozenInputs {
        let mut fz = FrozenInputs {
            depth_norm: vec![0.0; self.n_gaussians],
            view_dirs: vec![[0.0; 3]; self.n_gaussians],
        };
        for (k, pg) in self.projected.iter().enumerate() {
            fz.depth_norm[pg.source_index] = self.depth_norm[k];
            fz.view_dirs[pg.source_index] = self.view_dirs[k];
        }
        fz
    }

    pub fn output(&self) -> RenderOutput {
        let (w, h) = (self.camera.width, self.camera.height);
        let v = &self.composite.values;
        let pick = |c: usize| (0..w * h).map(|p| v[p * N_CHANNELS + c]).collect::<Vec<_>>();
        let mut color = Vec::with_capacity(w * h * 3);
        for p in 0..w * h {
            color.extend_from_slice(&v[p * N_CHANNELS..p * N_CHANNELS + 3]);
        }
        RenderOutput {
            color: ImagePlane::from_vec(w, h, 3, color).expect("render size"),
            depth: ImagePlane::from_vec(w, h, 1, pick(CH_Z)).expect("render size"),
            transmission: ImagePlane::from_vec(w, h, 1, pick(CH_T)).expect("render size"),
            alpha: ImagePlane::from_vec(w, h, 1, self.composite.alpha()).expect("render size"),
            n_contrib: self.composite.n_contrib.clone(),
        }
    }

    /// Backpropagates map gradients to the cloud latents and fog parameters.
    pub fn backward(&self, cloud: &GaussianCloud, grads: &RenderGrads) -> Result<SceneGrads> {
        if cloud.len() != self.n_gaussians || cloud.sh_degree() != self.sh_degree {
            return Err(Error::shape("cloud changed between forward and backward"));
        }
        let (w, h) = (self.camera.width, self.camera.height);
        let npix = w * h;
        let check = |m: &Option<ImagePlane>, ch: usize, name: &str| -> Result<()> {
            match m {
                Some(p) if p.width() != w || p.height() != h || p.channels() != ch => Err(Error::shape(
                    format!("{name} gradient is {}x{}x{}, render is {w}x{h}x{ch}", p.width(), p.height(), p.channels()),
                )),
                _ => Ok(()),
            }
        };
        check(&grads.color, 3, "color")?;
        check(&grads.transmission, 1, "transmission")?;
        check(&grads.depth, 1, "depth")?;
        check(&grads.alpha, 1, "alpha")?;

        let mut up = vec![0.0; npix * N_CHANNELS];
        if let Some(g) = &grads.color {
            for p in 0..npix {
                up[p * N_CHANNELS..p * N_CHANNELS + 3].copy_from_slice(&g.data()[p * 3..p * 3 + 3]);
            }
        }
        if let Some(g) = &grads.transmission {
            for p in 0..npix {
                up[p * N_CHANNELS + CH_T] = g.data()[p];
            }
        }
        if let Some(g) = &grads.depth {
            for p in 0..npix {
                up[p * N_CHANNELS + CH_Z] = g.data()[p];
            }
        }

        let cg = composite_backward(
            &self.bins,
            &self.projected,
            &self.opacities,
            &self.channels,
            &self.background,
            &self.composite,
            &up,
            grads.alpha.as_ref().map(|a| a.data()),
        )?;

        let n = self.projected.len();
        let grad_color: Vec<[f64; 3]> = (0..n)
            .map(|k| [0, 1, 2].map(|c| cg.channels[k * N_CHANNELS + c]))
            .collect();
        let grad_t: Vec<f64> = (0..n).map(|k| cg.channels[k * N_CHANNELS + CH_T]).collect();

        let mut out = SceneGrads::zeros(cloud);
        let grad_clear = match (&self.fog, self.foggy) {
            (Some(f), true) => {
                let fg = fog::fog_backward(&self.clear_colors, &self.depth_norm, f, &grad_color, &grad_t);
                out.beta_weight = fg.beta_weight;
                out.atmos_latent = fg.atmos_latent;
                fg.clear
            }
            (Some(f), false) => {
                out.beta_weight = (0..n)
                    .map(|k| grad_t[k] * fog::transmission_with_grad(self.depth_norm[k], f).1)
                    .sum();
                grad_color
            }
            (None, _) => grad_color,
        };

        let stride = cloud.coeffs_per_gaussian() * 3;
        for (k, pg) in self.projected.iter().enumerate() {
            let i = pg.source_index;
            out.visible[i] = true;
            sh::eval_backward(
                self.sh_degree,
                cloud.coeffs(i),
                self.view_dirs[k],
                grad_clear[k],
                &mut out.color_coeffs[i * stride..(i + 1) * stride],
            );
            let a = self.opacities[k];
            out.opacity_latents[i] += cg.opacity[k] * a * (1.0 - a);

            let pgrad = ProjectedGrad {
                mean2d: cg.mean2d[k],
                conic: cg.conic[k],
                depth: cg.channels[k * N_CHANNELS + CH_Z],
            };
            let cov3 = cloud.covariance(i)?;
            let (g_pos, g_cov) = project_backward(&self.camera, pg, &cov3, &pgrad);
            let (g_scale, g_rot) = build_covariance_backward(&g_cov, cloud.log_scales[i], cloud.rotations[i])?;
            for j in 0..3 {
                out.positions[i][j] += g_pos[j];
                out.log_scales[i][j] += g_scale[j];
            }
            for j in 0..4 {
                out.rotations[i][j] += g_rot[j];
            }
            out.mean2d[i][0] += cg.mean2d[k][0];
            out.mean2d[i][1] += cg.mean2d[k][1];
        }
        Ok(out)
    }
}

/// Renders every map for one camera. Foggy and transmission modes need fog
/// parameters; clear and depth modes splat the clear colors.
pub fn render(
    cloud: &GaussianCloud,
    camera: &Camera,
    fog: Option<&FogParams>,
    mode: RenderMode,
    options: &RenderOptions,
) -> Result<RenderOutput> {
    let foggy = match mode {
        RenderMode::Foggy => true,
        RenderMode::Transmission => {
            if fog.is_none() {
                return Err(Error::invalid("transmission rendering needs fog parameters"));
            }
            true
        }
        RenderMode::Clear | RenderMode::Depth => false,
    };
    Ok(render_pass(cloud, camera, fog, foggy, options)?.output())
}
