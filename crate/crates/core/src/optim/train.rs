use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fog::FogParams;
use crate::image::ImagePlane;
use crate::losses::{
    depth_loss, depth_loss_with_fit, effective_weights, normalized_depth_weights, psnr, reconstruction_loss, ssim,
    weighted_l1, LossComponents, LossReport,
};
use crate::priors::{bcp_loss, dcp_loss, MattingLaplacian, PriorMaps};
use crate::raster::{render, render_pass_frozen, FrozenInputs, RenderGrads, RenderMode, RenderOptions, SceneGrads};
use crate::scene::{rotation_matrix, sigmoid, Camera, GaussianCloud};

use super::adam::{adam_step, AdamMoments};
use super::config::TrainConfig;

/// One training view with its precomputed priors.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    pub image: ImagePlane,
    pub pseudo_depth: Option<ImagePlane>,
    priors: Option<(PriorMaps, MattingLaplacian)>,
}

impl TrainView {
    pub fn new(camera: Camera, image: ImagePlane, pseudo_depth: Option<ImagePlane>) -> Result<Self> {
        if image.width() != camera.width || image.height() != camera.height || image.channels() != 3 {
            return Err(Error::shape(format!(
                "image is {}x{}x{}, camera expects {}x{}x3",
                image.width(),
                image.height(),
                image.channels(),
                camera.width,
                camera.height
            )));
        }
        if let Some(d) = &pseudo_depth {
            if d.width() != camera.width || d.height() != camera.height || d.channels() != 1 {
                return Err(Error::shape("pseudo-depth does not match the camera"));
            }
        }
        Ok(Self {
            camera,
            image,
            pseudo_depth,
            priors: None,
        })
    }

    pub fn priors(&self) -> Option<&PriorMaps> {
        self.priors.as_ref().map(|p| &p.0)
    }
}

/// Optimizer and densification state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: usize,
    pub positions: AdamMoments,
    pub log_scales: AdamMoments,
    pub rotations: AdamMoments,
    pub opacity: AdamMoments,
    pub colors: AdamMoments,
    pub beta: AdamMoments,
    pub atmos: AdamMoments,
    /// Summed screen-space gradient norms (NDC units) per Gaussian.
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    pub seed: u64,
}

impl TrainState {
    pub fn new(cloud: &GaussianCloud, seed: u64) -> Self {
        let n = cloud.len();
        Self {
            iteration: 0,
            positions: AdamMoments::zeros(3 * n),
            log_scales: AdamMoments::zeros(3 * n),
            rotations: AdamMoments::zeros(4 * n),
            opacity: AdamMoments::zeros(n),
            colors: AdamMoments::zeros(cloud.color_coeffs.len()),
            beta: AdamMoments::zeros(1),
            atmos: AdamMoments::zeros(3),
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            seed,
        }
    }

    /// Checks that every per-Gaussian buffer matches the cloud.
    pub fn check(&self, cloud: &GaussianCloud) -> Result<()> {
        let n = cloud.len();
        let ok = self.positions.len() == 3 * n
            && self.log_scales.len() == 3 * n
            && self.rotations.len() == 4 * n
            && self.opacity.len() == n
            && self.colors.len() == cloud.color_coeffs.len()
            && self.grad_accum.len() == n
            && self.grad_count.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("optimizer state does not match a cloud of {n} Gaussians")))
        }
    }

    fn reset_stats(&mut self, n: usize) {
        self.grad_accum = vec![0.0; n];
        self.grad_count = vec![0; n];
    }
}

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}

/// View index used at `iteration`: a fresh seeded shuffle every epoch.
pub fn view_for_iteration(seed: u64, n_views: usize, iteration: usize) -> usize {
    let epoch = iteration / n_views;
    let mut order: Vec<usize> = (0..n_views).collect();
    order.shuffle(&mut stream(seed, 1, epoch as u64));
    order[iteration % n_views]
}

/// 1.1 × the largest distance of a camera center from their mean; 1 for a
/// degenerate rig.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = cameras.iter().map(|c| c.center()).collect();
    let mean = centers.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyStats {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small and splits large Gaussians whose mean screen gradient
/// exceeds the threshold, then prunes transparent ones. Moments of new
/// Gaussians start at zero.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    state: &mut TrainState,
    config: &TrainConfig,
    extent: f64,
) -> Result<DensifyStats> {
    state.check(cloud)?;
    let n = cloud.len();
    let cfg = &config.densify;
    let big = cfg.percent_dense * extent;
    let mut clone = Vec::new();
    let mut split = Vec::new();
    for i in 0..n {
        let avg = if state.grad_count[i] > 0 {
            state.grad_accum[i] / f64::from(state.grad_count[i])
        } else {
            0.0
        };
        if avg < cfg.grad_threshold {
            continue;
        }
        let max_scale = cloud.log_scales[i].iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
        if max_scale > big {
            split.push(i);
        } else {
            clone.push(i);
        }
    }

    for &i in &clone {
        cloud.push_from(i, cloud.positions[i], cloud.log_scales[i]);
    }
    let mut rng = stream(state.seed, 2, state.iteration as u64);
    let shrink = 1.6f64.ln();
    for &i in &split {
        let r = rotation_matrix(cloud.rotations[i]);
        let s = cloud.log_scales[i].map(f64::exp);
        let ls = cloud.log_scales[i].map(|v| v - shrink);
        for _ in 0..2 {
            let local = nalgebra::Vector3::from_fn(|k, _| s[k] * rng.sample::<f64, _>(StandardNormal));
            let offset = r * local;
            let p = cloud.positions[i];
            cloud.push_from(i, [p[0] + offset.x, p[1] + offset.y, p[2] + offset.z], ls);
        }
    }
    let born = cloud.len() - n;

    let mut keep = vec![true; cloud.len()];
    for &i in &split {
        keep[i] = false;
    }
    let mut pruned = 0;
    for (i, k) in keep.iter_mut().enumerate() {
        if *k && sigmoid(cloud.opacity_latents[i]) < cfg.prune_opacity {
            *k = false;
            pruned += 1;
        }
    }

    let stride = cloud.coeffs_per_gaussian() * 3;
    for (m, width) in [
        (&mut state.positions, 3),
        (&mut state.log_scales, 3),
        (&mut state.rotations, 4),
        (&mut state.opacity, 1),
        (&mut state.colors, stride),
    ] {
        m.grow(born * width);
        m.retain(&keep, width);
    }
    cloud.retain_mask(&keep);
    state.reset_stats(cloud.len());
    state.check(cloud)?;
    Ok(DensifyStats {
        cloned: clone.len(),
        split: split.len(),
        pruned,
    })
}

/// Gradient-free intermediates of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Detached {
    pub render: FrozenInputs,
    /// Scale and shift aligning the pseudo-depth.
    pub depth_fit: Option<(f64, f64)>,
    pub depth_weights: Option<ImagePlane>,
}

#[derive(Debug, Clone)]
pub struct ViewLoss {
    pub report: LossReport,
    pub grads: SceneGrads,
    pub detached: Detached,
}

/// Owns the scene, fog, views, and optimizer state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cloud: GaussianCloud,
    pub fog: FogParams,
    pub views: Vec<TrainView>,
    pub config: TrainConfig,
    pub state: TrainState,
    pub extent: f64,
    pub last_densify: Option<DensifyStats>,
}

fn add_scaled(dst: &mut ImagePlane, src: &ImagePlane, w: f64) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += w * s;
    }
}

impl Trainer {
    pub fn new(cloud: GaussianCloud, mut views: Vec<TrainView>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        cloud.validate()?;
        if views.is_empty() {
            return Err(Error::invalid("training needs at least one view"));
        }
        let needs_priors = config.fog_enabled && (config.flags.dcp || config.flags.bcp);
        if needs_priors {
            for v in &mut views {
                let maps = PriorMaps::estimate(&v.image, config.prior_patch, config.prior_omega)?;
                let lap = MattingLaplacian::new(&v.image)?;
                v.priors = Some((maps, lap));
            }
        }
        let fog = FogParams::with_light(config.initial_beta, [config.initial_light; 3], config.use_sigmoid);
        let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
        let state = TrainState::new(&cloud, config.seed);
        Ok(Self {
            cloud,
            fog,
            views,
            config,
            state,
            extent: scene_extent(&cams),
            last_densify: None,
        })
    }

    fn options(&self) -> RenderOptions {
        RenderOptions {
            background: self.config.background,
            ..RenderOptions::default()
        }
    }

    /// Total loss and gradients on one view at a given iteration, without
    /// touching any state.
    ///
    /// With `frozen`, the quantities that carry no gradient are taken from an
    /// earlier call instead of recomputed, which makes the returned total a
    /// function whose derivative is exactly the returned gradient.
    pub fn view_loss(&self, view_idx: usize, iter: usize, frozen: Option<&Detached>) -> Result<ViewLoss> {
        let cfg = &self.config;
        let view = self
            .views
            .get(view_idx)
            .ok_or_else(|| Error::invalid(format!("view {view_idx} out of range")))?;
        let fog = cfg.fog_enabled.then_some(&self.fog);
        let pass = render_pass_frozen(
            &self.cloud,
            &view.camera,
            fog,
            cfg.fog_enabled,
            &self.options(),
            frozen.map(|f| &f.render),
        )?;
        let out = pass.output();
        let mut detached = Detached {
            render: pass.frozen_inputs(),
            depth_fit: None,
            depth_weights: None,
        };

        let (w_dcp, w_bcp, w_depth, w_dw) = effective_weights(&cfg.weights, &cfg.flags, iter, cfg.iterations)?;
        let mut comps = LossComponents::default();
        let (rec, mut g_color) = reconstruction_loss(&out.color, &view.image, cfg.weights.lambda_ssim)?;
        comps.rec = rec;
        let mut g_t = ImagePlane::new(out.transmission.width(), out.transmission.height(), 1);
        let mut g_depth = None;
        if let Some((maps, lap)) = view.priors.as_ref().filter(|_| cfg.fog_enabled) {
            if cfg.flags.dcp {
                let (l, g) = dcp_loss(&out.transmission, &maps.t_dcp, lap, cfg.lambda_smooth, cfg.literal_smoothness)?;
                comps.dcp = l;
                add_scaled(&mut g_t, &g, w_dcp);
            }
            if cfg.flags.bcp {
                let (l, g) = bcp_loss(&out.transmission, &maps.t_bcp)?;
                comps.bcp = l;
                add_scaled(&mut g_t, &g, w_bcp);
            }
        }
        if cfg.flags.depth {
            if let Some(pd) = &view.pseudo_depth {
                let fit = match frozen.and_then(|f| f.depth_fit) {
                    Some((scale, shift)) => depth_loss_with_fit(&out.depth, pd, scale, shift)?,
                    None => depth_loss(&out.depth, pd)?,
                };
                detached.depth_fit = Some((fit.scale, fit.shift));
                comps.depth = fit.loss;
                g_depth = Some(fit.grad.map(|g| g * w_depth));
            }
        }
        if cfg.flags.depth_weighted {
            let weights = match frozen.and_then(|f| f.depth_weights.clone()) {
                Some(wts) => wts,
                None => normalized_depth_weights(&out.depth),
            };
            let (l, g) = weighted_l1(&out.color, &view.image, &weights)?;
            detached.depth_weights = Some(weights);
            comps.depth_weighted = l;
            add_scaled(&mut g_color, &g, w_dw);
        }

        let mut report = LossReport {
            iteration: iter,
            view: view_idx,
            total: 0.0,
            components: comps,
            w_dcp: if comps.dcp != 0.0 || view.priors.is_some() && cfg.fog_enabled { w_dcp } else { 0.0 },
            w_bcp: if comps.bcp != 0.0 || view.priors.is_some() && cfg.fog_enabled { w_bcp } else { 0.0 },
            w_depth: if view.pseudo_depth.is_some() { w_depth } else { 0.0 },
            w_depth_weighted: w_dw,
        };
        report.total = report.recompute_total();
        if cfg.fog_enabled && cfg.beta_l2 > 0.0 {
            report.total += cfg.beta_l2 * self.fog.beta_weight * self.fog.beta_weight;
        }
        if !report.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at iteration {iter} (view {view_idx}): {:?}; beta {}, light {:?}, {} Gaussians",
                report.components,
                self.fog.beta_weight,
                self.fog.atmospheric_light(),
                self.cloud.len()
            )));
        }

        let mut grads = pass.backward(
            &self.cloud,
            &RenderGrads {
                color: Some(g_color),
                transmission: cfg.fog_enabled.then_some(g_t),
                depth: g_depth,
                alpha: None,
            },
        )?;
        if cfg.fog_enabled {
            grads.beta_weight += 2.0 * cfg.beta_l2 * self.fog.beta_weight;
        }
        Ok(ViewLoss {
            report,
            grads,
            detached,
        })
    }

    /// Runs one optimization step on the next view and returns its losses.
    pub fn train_iteration(&mut self) -> Result<LossReport> {
        let iter = self.state.iteration;
        let view_idx = view_for_iteration(self.config.seed, self.views.len(), iter);
        let ViewLoss { report, grads, .. } = self.view_loss(view_idx, iter, None)?;
        let view = &self.views[view_idx];
        let cam = view.camera.clone();
        self.accumulate_stats(&grads, &cam);
        self.apply_gradients(&grads)?;

        self.state.iteration += 1;
        let it = self.state.iteration;
        let d = &self.config.densify;
        self.last_densify = None;
        if d.enabled && it > d.start && it <= self.config.densify_stop() && it % d.interval == 0 {
            let stats = densify_and_prune(&mut self.cloud, &mut self.state, &self.config, self.extent)?;
            log::debug!("iteration {it}: densify {stats:?}, {} Gaussians", self.cloud.len());
            self.last_densify = Some(stats);
        }
        Ok(report)
    }

    fn accumulate_stats(&mut self, grads: &SceneGrads, camera: &Camera) {
        if self.state.iteration >= self.config.densify_stop() {
            return;
        }
        let (hw, hh) = (camera.width as f64 / 2.0, camera.height as f64 / 2.0);
        for i in 0..self.cloud.len() {
            if grads.visible[i] {
                let g = grads.mean2d[i];
                self.state.grad_accum[i] += (g[0] * hw).hypot(g[1] * hh);
                self.state.grad_count[i] += 1;
            }
        }
    }

    fn apply_gradients(&mut self, g: &SceneGrads) -> Result<()> {
        let iter = self.state.iteration;
        let cfg = &self.config;
        let lr = &cfg.lr;
        let st = &mut self.state;
        let c = &mut self.cloud;
        adam_step(
            c.positions.as_flattened_mut(),
            g.positions.as_flattened(),
            &mut st.positions,
            cfg.position_lr(iter)? * self.extent,
        )?;
        adam_step(c.log_scales.as_flattened_mut(), g.log_scales.as_flattened(), &mut st.log_scales, lr.scale)?;
        adam_step(c.rotations.as_flattened_mut(), g.rotations.as_flattened(), &mut st.rotations, lr.rotation)?;
        adam_step(&mut c.opacity_latents, &g.opacity_latents, &mut st.opacity, lr.opacity)?;
        adam_step(&mut c.color_coeffs, &g.color_coeffs, &mut st.colors, lr.color)?;
        if cfg.fog_enabled {
            adam_step(
                std::slice::from_mut(&mut self.fog.beta_weight),
                &[g.beta_weight],
                &mut st.beta,
                cfg.beta_lr(iter)?,
            )?;
            adam_step(&mut self.fog.atmos_latent, &g.atmos_latent, &mut st.atmos, lr.atmos)?;
        }
        Ok(())
    }

    /// Runs until the configured iteration count, calling `on_step` after
    /// every iteration.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &LossReport) -> Result<()>) -> Result<()> {
        while self.state.iteration < self.config.iterations {
            let report = self.train_iteration()?;
            on_step(self, &report)?;
        }
        Ok(())
    }

    /// Fog parameters to render with, if the fog model is active.
    pub fn fog(&self) -> Option<&FogParams> {
        self.config.fog_enabled.then_some(&self.fog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Renders clear views and scores them against ground truth, optionally
/// ignoring a border of `crop` pixels.
pub fn evaluate(
    cloud: &GaussianCloud,
    cameras: &[Camera],
    gt_clear: &[Option<ImagePlane>],
    crop: usize,
    options: &RenderOptions,
) -> Result<EvalReport> {
    if cameras.len() != gt_clear.len() {
        return Err(Error::shape("one ground-truth entry per camera is required"));
    }
    if cameras.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut views = Vec::with_capacity(cameras.len());
    for (i, (cam, gt)) in cameras.iter().zip(gt_clear).enumerate() {
        let gt = gt
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("missing ground-truth clear image for view {i}")))?;
        let rendered = render(cloud, cam, None, RenderMode::Clear, options)?.color;
        rendered.ensure_same_shape(gt, "render and ground truth")?;
        let (r, g) = if crop > 0 {
            (rendered.crop(crop)?, gt.crop(crop)?)
        } else {
            (rendered, gt.clone())
        };
        views.push(ViewMetrics {
            view: i,
            psnr: psnr(&r, &g, 1.0)?,
            ssim: ssim(&r, &g)?,
        });
    }
    let n = views.len() as f64;
    Ok(EvalReport {
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize) -> GaussianCloud {
        let pos: Vec<[f64; 3]> = (0..n).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        GaussianCloud::from_points(&pos, &vec![[0.5; 3]; n], &vec![0.05; n], 0.5, 0).unwrap()
    }

    #[test]
    fn view_order_is_a_permutation_per_epoch() {
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..7).map(|k| view_for_iteration(3, 7, epoch * 7 + k)).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
        assert_eq!(view_for_iteration(3, 7, 11), view_for_iteration(3, 7, 11));
    }

    #[test]
    fn densify_without_gradients_is_noop() {
        let mut c = cloud(5);
        let before = c.clone();
        let mut st = TrainState::new(&c, 0);
        let stats = densify_and_prune(&mut c, &mut st, &TrainConfig::default(), 1.0).unwrap();
        assert_eq!(stats, DensifyStats::default());
        assert_eq!(c, before);
    }

    #[test]
    fn transparent_gaussian_is_pruned() {
        let mut c = cloud(4);
        c.opacity_latents[2] = crate::scene::logit(1e-4);
        let mut st = TrainState::new(&c, 0);
        let stats = densify_and_prune(&mut c, &mut st, &TrainConfig::default(), 1.0).unwrap();
        assert_eq!(stats.pruned, 1);
        assert_eq!(c.len(), 3);
        assert!(c.opacity_latents.iter().all(|&o| sigmoid(o) >= 5e-3));
        st.check(&c).unwrap();
    }

    #[test]
    fn densify_bookkeeping() {
        let mut c = cloud(6);
        c.log_scales[4] = [0.5f64.ln(); 3];
        c.log_scales[5] = [0.5f64.ln(); 3];
        c.opacity_latents[1] = crate::scene::logit(1e-3);
        let mut st = TrainState::new(&c, 9);
        for i in [0, 4, 5] {
            st.grad_accum[i] = 1.0;
            st.grad_count[i] = 2;
        }
        st.positions.m.iter_mut().for_each(|m| *m = 1.0);
        let n = c.len();
        let s = densify_and_prune(&mut c, &mut st, &TrainConfig::default(), 10.0).unwrap();
        assert_eq!((s.cloned, s.split, s.pruned), (1, 2, 1));
        assert_eq!(c.len(), n + s.cloned + s.split - s.pruned);
        st.check(&c).unwrap();
        // Survivors keep their moments, newborns start at zero.
        let survivors = n - s.split - s.pruned;
        assert!(st.positions.m[..3 * survivors].iter().all(|&m| m == 1.0));
        assert!(st.positions.m[3 * survivors..].iter().all(|&m| m == 0.0));
        let shrunk = 0.5f64.ln() - 1.6f64.ln();
        assert_eq!(c.log_scales.iter().filter(|s| (s[0] - shrunk).abs() < 1e-15).count(), 4);
    }

    #[test]
    fn evaluate_perfect_render() {
        let c = cloud(3);
        let cam = Camera::look_at(
            nalgebra::Vector3::new(0.1, 0.0, -2.0),
            nalgebra::Vector3::new(0.1, 0.0, 0.0),
            nalgebra::Vector3::new(0.0, -1.0, 0.0),
            20.0,
            12,
            10,
        ).unwrap();
        let gt = render(&c, &cam, None, RenderMode::Clear, &RenderOptions::default()).unwrap().color;
        let rep = evaluate(&c, &[cam.clone(), cam.clone()], &[Some(gt.clone()), Some(gt)], 0, &RenderOptions::default())
            .unwrap();
        assert_eq!(rep.mean_psnr, f64::INFINITY);
        assert_eq!(rep.mean_ssim, 1.0);
        assert!(evaluate(&c, &[cam], &[None], 0, &RenderOptions::default()).is_err());
    }
}
