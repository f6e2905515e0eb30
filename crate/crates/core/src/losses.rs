//! Reconstruction, depth, and composite losses, their schedules, and the
//! PSNR / SSIM metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const DEPTH_WEIGHT_START: f64 = 1.0;
pub const DEPTH_WEIGHT_END: f64 = 0.01;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (k, t) in taps.iter_mut().enumerate() {
        let d = k as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable Gaussian blur whose window is truncated at the borders and
/// renormalized over the in-bounds taps.
struct WindowFilter {
    taps: [f64; SSIM_WINDOW],
    w: usize,
    h: usize,
    inv_norm_x: Vec<f64>,
    inv_norm_y: Vec<f64>,
}

const R: usize = SSIM_WINDOW / 2;

/// In-bounds tap range `[lo, hi]` of the window centred at `i`.
#[inline]
fn span(i: usize, n: usize) -> (usize, usize) {
    (i.saturating_sub(R), (i + R).min(n - 1))
}

impl WindowFilter {
    fn new(w: usize, h: usize) -> Self {
        let taps = gaussian_taps();
        let inv_norm = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let (lo, hi) = span(i, n);
                    1.0 / (lo..=hi).map(|j| taps[j + R - i]).sum::<f64>()
                })
                .collect()
        };
        Self {
            taps,
            w,
            h,
            inv_norm_x: inv_norm(w),
            inv_norm_y: inv_norm(h),
        }
    }

    fn horizontal(&self, src: &[f64], adjoint: bool) -> Vec<f64> {
        let w = self.w;
        let mut out = vec![0.0; src.len()];
        for (s_row, o_row) in src.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            for x in 0..w {
                let (lo, hi) = span(x, w);
                let taps = &self.taps[lo + R - x..=hi + R - x];
                let inv = self.inv_norm_x[x];
                if adjoint {
                    let v = s_row[x] * inv;
                    for (o, t) in o_row[lo..=hi].iter_mut().zip(taps) {
                        *o += t * v;
                    }
                } else {
                    let acc: f64 = s_row[lo..=hi].iter().zip(taps).map(|(v, t)| v * t).sum();
                    o_row[x] = acc * inv;
                }
            }
        }
        out
    }

    fn vertical(&self, src: &[f64], adjoint: bool) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            let (lo, hi) = span(y, h);
            let inv = self.inv_norm_y[y];
            for yy in lo..=hi {
                let wgt = self.taps[yy + R - y] * inv;
                let (from, to) = if adjoint { (y, yy) } else { (yy, y) };
                let s_row = &src[from * w..(from + 1) * w];
                for (o, v) in out[to * w..(to + 1) * w].iter_mut().zip(s_row) {
                    *o += wgt * v;
                }
            }
        }
        out
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        self.vertical(&self.horizontal(src, false), false)
    }

    fn adjoint(&self, src: &[f64]) -> Vec<f64> {
        self.horizontal(&self.vertical(src, true), true)
    }
}

fn check_images(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    a.ensure_same_shape(b, "images")
}

/// Mean SSIM over channels and pixels, plus its gradient w.r.t. `a` when
/// requested.
fn ssim_impl(a: &ImagePlane, b: &ImagePlane, want_grad: bool) -> Result<(f64, Option<ImagePlane>)> {
    check_images(a, b)?;
    let (w, h, nc) = (a.width(), a.height(), a.channels());
    let npix = w * h;
    let filter = WindowFilter::new(w, h);
    let total = (npix * nc) as f64;
    let mut sum = 0.0;
    let mut grad = want_grad.then(|| ImagePlane::new(w, h, nc));

    for c in 0..nc {
        let ca: Vec<f64> = (0..npix).map(|p| a.data()[p * nc + c]).collect();
        let cb: Vec<f64> = (0..npix).map(|p| b.data()[p * nc + c]).collect();
        let mu_a = filter.apply(&ca);
        let mu_b = filter.apply(&cb);
        let e_aa = filter.apply(&ca.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_bb = filter.apply(&cb.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_ab = filter.apply(&ca.iter().zip(&cb).map(|(x, y)| x * y).collect::<Vec<_>>());

        let mut g_mu = vec![0.0; npix];
        let mut g_aa = vec![0.0; npix];
        let mut g_ab = vec![0.0; npix];
        for p in 0..npix {
            let (ma, mb) = (mu_a[p], mu_b[p]);
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * (e_ab[p] - ma * mb) + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = (e_aa[p] - ma * ma) + (e_bb[p] - mb * mb) + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            sum += s;
            if want_grad {
                let up = 1.0 / total;
                let den = b1 * b2;
                g_mu[p] = up * ((2.0 * mb * a2 - 2.0 * mb * a1) / den - s * 2.0 * ma / b1 + s * 2.0 * ma / b2);
                g_aa[p] = up * (-s / b2);
                g_ab[p] = up * (2.0 * a1 / den);
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = filter.adjoint(&g_mu);
            let t_aa = filter.adjoint(&g_aa);
            let t_ab = filter.adjoint(&g_ab);
            for p in 0..npix {
                g.data_mut()[p * nc + c] = t_mu[p] + 2.0 * ca[p] * t_aa[p] + cb[p] * t_ab[p];
            }
        }
    }
    Ok((sum / total, grad))
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5); windows are cut at the
/// image border and renormalized.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(a: &ImagePlane, b: &ImagePlane) -> Result<(f64, ImagePlane)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error and its gradient w.r.t. `render`.
pub fn l1_loss(render: &ImagePlane, target: &ImagePlane) -> Result<(f64, ImagePlane)> {
    check_images(render, target)?;
    let n = render.data().len() as f64;
    let mut loss = 0.0;
    let grad = render
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, t)| {
            let d = r - t;
            loss += d.abs();
            sign(d) / n
        })
        .collect();
    Ok((
        loss / n,
        ImagePlane::from_vec(render.width(), render.height(), render.channels(), grad)?,
    ))
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)`.
pub fn reconstruction_loss(render: &ImagePlane, target: &ImagePlane, lambda_ssim: f64) -> Result<(f64, ImagePlane)> {
    let (l1, mut grad) = l1_loss(render, target)?;
    if lambda_ssim == 0.0 {
        return Ok((l1, grad));
    }
    let (s, sg) = ssim_with_grad(render, target)?;
    for (g, d) in grad.data_mut().iter_mut().zip(sg.data()) {
        *g = (1.0 - lambda_ssim) * *g - lambda_ssim * d;
    }
    Ok(((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s), grad))
}

/// Log-linear interpolation from `start` at step 0 to `end` at `max_iter`,
/// constant afterwards.
pub fn log_lerp(start: f64, end: f64, iter: usize, max_iter: usize) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::invalid("schedule length must be positive"));
    }
    if iter == 0 {
        return Ok(start);
    }
    if iter >= max_iter {
        return Ok(end);
    }
    let s = iter as f64 / max_iter as f64;
    Ok(((1.0 - s) * start.ln() + s * end.ln()).exp())
}

/// Weight of the pseudo-depth loss: 1 at step 0, decaying log-linearly to
/// 0.01 at `max_iter`.
pub fn depth_weight(iter: usize, max_iter: usize) -> Result<f64> {
    log_lerp(DEPTH_WEIGHT_START, DEPTH_WEIGHT_END, iter, max_iter)
}

/// Result of the affinely aligned depth loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthLoss {
    pub loss: f64,
    pub grad: ImagePlane,
    pub scale: f64,
    pub shift: f64,
}

/// Aligns the pseudo-depth to the rendered depth with a least-squares scale
/// and shift (treated as constants), then takes the mean absolute residual.
pub fn depth_loss(d_rendered: &ImagePlane, d_pseudo: &ImagePlane) -> Result<DepthLoss> {
    check_images(d_rendered, d_pseudo)?;
    if d_rendered.channels() != 1 {
        return Err(Error::shape("depth maps must have one channel"));
    }
    if !d_pseudo.is_finite() {
        return Err(Error::invalid("pseudo-depth contains non-finite values"));
    }
    let r = d_rendered.data();
    let p = d_pseudo.data();
    let n = r.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mr = r.iter().sum::<f64>() / n;
    let mut var = 0.0;
    let mut cov = 0.0;
    for (&pi, &ri) in p.iter().zip(r) {
        var += (pi - mp) * (pi - mp);
        cov += (pi - mp) * (ri - mr);
    }
    let (scale, shift) = if var > 1e-12 * (1.0 + mp * mp) * n {
        let a = cov / var;
        (a, mr - a * mp)
    } else {
        log::warn!("pseudo-depth is constant; skipping scale alignment");
        (1.0, mr - mp)
    };
    depth_loss_with_fit(d_rendered, d_pseudo, scale, shift)
}

/// The aligned L1 term for a given scale and shift.
pub fn depth_loss_with_fit(d_rendered: &ImagePlane, d_pseudo: &ImagePlane, scale: f64, shift: f64) -> Result<DepthLoss> {
    check_images(d_rendered, d_pseudo)?;
    let r = d_rendered.data();
    let p = d_pseudo.data();
    let n = r.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(r)
        .map(|(&pi, &ri)| {
            let d = scale * pi + shift - ri;
            loss += d.abs();
            -sign(d) / n
        })
        .collect();
    Ok(DepthLoss {
        loss: loss / n,
        grad: ImagePlane::from_vec(d_rendered.width(), d_rendered.height(), 1, grad)?,
        scale,
        shift,
    })
}

/// Per-pixel weights from a depth map min-max normalized to `[0, 1]`. A flat
/// map weights every pixel by 1.
pub fn normalized_depth_weights(depth: &ImagePlane) -> ImagePlane {
    let (lo, hi) = depth.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return ImagePlane::filled(depth.width(), depth.height(), 1, 1.0);
    }
    depth.map(|d| (d - lo) / range)
}

/// Mean over pixels and channels of `weight · |render − target|`.
pub fn weighted_l1(render: &ImagePlane, target: &ImagePlane, weights: &ImagePlane) -> Result<(f64, ImagePlane)> {
    check_images(render, target)?;
    if weights.width() != render.width() || weights.height() != render.height() || weights.channels() != 1 {
        return Err(Error::shape("weight map does not match the image"));
    }
    let nc = render.channels();
    let n = render.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; render.data().len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let w = weights.data()[i / nc];
        let d = render.data()[i] - target.data()[i];
        loss += w * d.abs();
        *g = w * sign(d) / n;
    }
    Ok((
        loss / n,
        ImagePlane::from_vec(render.width(), render.height(), nc, grad)?,
    ))
}

/// Reconstruction error weighted by the (frozen, normalized) rendered depth,
/// emphasizing distant pixels.
pub fn depth_weighted_recon(
    render: &ImagePlane,
    target: &ImagePlane,
    d_rendered_frozen: &ImagePlane,
) -> Result<(f64, ImagePlane)> {
    weighted_l1(render, target, &normalized_depth_weights(d_rendered_frozen))
}

/// Peak signal-to-noise ratio in dB; identical images give `+∞`.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    check_images(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_dcp: f64,
    pub lambda_bcp: f64,
    pub lambda_depth_weighted: f64,
    pub lambda_depth_start: f64,
    pub lambda_depth_end: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_dcp: 0.1,
            lambda_bcp: 0.1,
            lambda_depth_weighted: 0.1,
            lambda_depth_start: DEPTH_WEIGHT_START,
            lambda_depth_end: DEPTH_WEIGHT_END,
        }
    }
}

/// Which terms of the total loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    pub dcp: bool,
    pub bcp: bool,
    pub depth: bool,
    pub depth_weighted: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self {
            dcp: true,
            bcp: true,
            depth: true,
            depth_weighted: true,
        }
    }
}

impl LossFlags {
    pub fn reconstruction_only() -> Self {
        Self {
            dcp: false,
            bcp: false,
            depth: false,
            depth_weighted: false,
        }
    }
}

/// Unweighted loss terms of one view.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec: f64,
    pub dcp: f64,
    pub bcp: f64,
    pub depth: f64,
    pub depth_weighted: f64,
}

/// Weighted total and its parts. Disabled terms carry weight 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub view: usize,
    pub total: f64,
    pub components: LossComponents,
    pub w_dcp: f64,
    pub w_bcp: f64,
    pub w_depth: f64,
    pub w_depth_weighted: f64,
}

impl LossReport {
    pub fn recompute_total(&self) -> f64 {
        let c = &self.components;
        c.rec + self.w_dcp * c.dcp + self.w_bcp * c.bcp + self.w_depth * c.depth + self.w_depth_weighted * c.depth_weighted
    }
}

/// Effective per-term weights at `iter`.
pub fn effective_weights(
    weights: &LossWeights,
    flags: &LossFlags,
    iter: usize,
    max_iter: usize,
) -> Result<(f64, f64, f64, f64)> {
    let depth = log_lerp(weights.lambda_depth_start, weights.lambda_depth_end, iter, max_iter)?;
    let on = |f: bool, w: f64| if f { w } else { 0.0 };
    Ok((
        on(flags.dcp, weights.lambda_dcp),
        on(flags.bcp, weights.lambda_bcp),
        on(flags.depth, depth),
        on(flags.depth_weighted, weights.lambda_depth_weighted),
    ))
}

/// `L_rec + λ_D·L_DCP + λ_B·L_BCP + λ_d(iter)·L_d + λ_drec·L_drec`.
pub fn total_loss(
    components: LossComponents,
    weights: &LossWeights,
    flags: &LossFlags,
    iter: usize,
    max_iter: usize,
) -> Result<LossReport> {
    let (w_dcp, w_bcp, w_depth, w_depth_weighted) = effective_weights(weights, flags, iter, max_iter)?;
    let mut report = LossReport {
        iteration: iter,
        view: 0,
        total: 0.0,
        components,
        w_dcp,
        w_bcp,
        w_depth,
        w_depth_weighted,
    };
    report.total = report.recompute_total();
    Ok(report)
}
