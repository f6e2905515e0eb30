//! Dark- and bright-channel dehazing priors and the losses that pull the
//! rendered transmission map toward them.

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Lower clamp of prior transmission maps.
pub const T_FLOOR: f64 = 0.05;
pub const DEFAULT_PATCH: usize = 15;
pub const DEFAULT_OMEGA: f64 = 0.95;
/// Fraction of brightest dark-channel pixels averaged into the light estimate.
pub const LIGHT_TOP_FRACTION: f64 = 0.001;
/// Regularization of the matting Laplacian window covariances.
pub const LAPLACIAN_EPS: f64 = 1e-4;
/// Longest side at which the matting Laplacian is assembled.
pub const LAPLACIAN_MAX_SIDE: usize = 128;
pub const DEFAULT_LAMBDA_SMOOTH: f64 = 0.1;

/// Prior transmission maps of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMaps {
    pub t_dcp: ImagePlane,
    pub t_bcp: ImagePlane,
    pub a_est: [f64; 3],
    pub patch_size: usize,
    pub omega: f64,
}

impl PriorMaps {
    /// Runs both priors on a foggy image, using the dark-channel estimate of
    /// the atmospheric light for both.
    pub fn estimate(image: &ImagePlane, patch_size: usize, omega: f64) -> Result<Self> {
        let dark = dark_channel(image, patch_size)?;
        let a_est = estimate_atmospheric_light(image, &dark)?;
        // The bright-channel formula needs mean(A) < 1; a saturated estimate
        // is pulled just below.
        let mean = a_est.iter().sum::<f64>() / 3.0;
        let a_bcp = if mean >= 1.0 - 1e-3 {
            a_est.map(|a| a * (1.0 - 1e-3) / mean)
        } else {
            a_est
        };
        Ok(Self {
            t_dcp: dcp_transmission(image, a_est, omega, patch_size)?,
            t_bcp: bcp_transmission(image, a_bcp, patch_size)?,
            a_est,
            patch_size,
            omega,
        })
    }
}

fn check_patch(patch: usize) -> Result<()> {
    if patch == 0 || patch % 2 == 0 {
        return Err(Error::invalid(format!("patch size must be odd and ≥ 1, got {patch}")));
    }
    Ok(())
}

fn check_color(image: &ImagePlane) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::shape(format!("expected an RGB image, got {} channels", image.channels())));
    }
    Ok(())
}

/// Separable windowed min/max with windows clamped to the image.
fn window_filter(plane: &ImagePlane, patch: usize, pick: fn(f64, f64) -> f64) -> ImagePlane {
    let (w, h) = (plane.width(), plane.height());
    let r = patch / 2;
    let src = plane.data();
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = src[y * w + lo..=y * w + hi].iter().copied().reduce(pick).unwrap();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).reduce(pick).unwrap();
        }
    }
    ImagePlane::from_vec(w, h, 1, out).expect("filter keeps size")
}

fn per_pixel(image: &ImagePlane, f: impl Fn(&[f64]) -> f64) -> ImagePlane {
    let (w, h) = (image.width(), image.height());
    let data = (0..w * h).map(|p| f(&image.data()[p * 3..p * 3 + 3])).collect();
    ImagePlane::from_vec(w, h, 1, data).expect("per-pixel map")
}

/// Min over the patch of the min over channels.
pub fn dark_channel(image: &ImagePlane, patch: usize) -> Result<ImagePlane> {
    check_patch(patch)?;
    check_color(image)?;
    let m = per_pixel(image, |p| p[0].min(p[1]).min(p[2]));
    Ok(window_filter(&m, patch, f64::min))
}

/// Max over the patch of the max over channels.
pub fn bright_channel(image: &ImagePlane, patch: usize) -> Result<ImagePlane> {
    check_patch(patch)?;
    check_color(image)?;
    let m = per_pixel(image, |p| p[0].max(p[1]).max(p[2]));
    Ok(window_filter(&m, patch, f64::max))
}

/// Mean color of the pixels with the brightest dark channel (top 0.1 %, at
/// least one pixel). Ties go to the lower pixel index.
pub fn estimate_atmospheric_light(image: &ImagePlane, dark: &ImagePlane) -> Result<[f64; 3]> {
    check_color(image)?;
    if dark.width() != image.width() || dark.height() != image.height() || dark.channels() != 1 {
        return Err(Error::shape("dark channel does not match the image"));
    }
    let n = image.pixel_count();
    let count = ((n as f64 * LIGHT_TOP_FRACTION).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let d = dark.data();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let mut sum = [0.0; 3];
    for &p in &order[..count] {
        for c in 0..3 {
            sum[c] += image.data()[p * 3 + c];
        }
    }
    Ok(sum.map(|s| s / count as f64))
}

/// `t = 1 − ω·dark(I / A)`, clamped to `[0.05, 1]`.
pub fn dcp_transmission(image: &ImagePlane, light: [f64; 3], omega: f64, patch: usize) -> Result<ImagePlane> {
    check_color(image)?;
    if light.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::invalid(format!("atmospheric light {light:?} must be positive")));
    }
    let normalized = ImagePlane::from_fn(image.width(), image.height(), 3, |x, y, c| {
        image.get(x, y, c) / light[c]
    });
    let dark = dark_channel(&normalized, patch)?;
    Ok(dark.map(|d| (1.0 - omega * d).clamp(T_FLOOR, 1.0)))
}

/// `t = (bright(I) − Ā) / (1 − Ā)` with `Ā = mean(A)`, clamped to `[0.05, 1]`.
pub fn bcp_transmission(image: &ImagePlane, light: [f64; 3], patch: usize) -> Result<ImagePlane> {
    let mean = light.iter().sum::<f64>() / 3.0;
    if !(mean < 1.0) {
        return Err(Error::invalid(format!(
            "bright-channel prior needs mean atmospheric light < 1, got {mean}"
        )));
    }
    let bright = bright_channel(image, patch)?;
    Ok(bright.map(|b| ((b - mean) / (1.0 - mean)).clamp(T_FLOOR, 1.0)))
}

#[derive(Debug, Clone)]
struct Window {
    x: usize,
    y: usize,
    mean: [f64; 3],
    inv: [[f64; 3]; 3],
}

/// Area-average downsampling by an integer factor (edge blocks may be
/// partial).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Downsample {
    factor: usize,
    full_w: usize,
    full_h: usize,
    w: usize,
    h: usize,
}

impl Downsample {
    fn new(full_w: usize, full_h: usize, max_side: usize) -> Self {
        let factor = full_w.max(full_h).div_ceil(max_side).max(1);
        Self {
            factor,
            full_w,
            full_h,
            w: full_w.div_ceil(factor),
            h: full_h.div_ceil(factor),
        }
    }

    fn count(&self, x: usize, y: usize) -> f64 {
        let bw = ((x + 1) * self.factor).min(self.full_w) - x * self.factor;
        let bh = ((y + 1) * self.factor).min(self.full_h) - y * self.factor;
        (bw * bh) as f64
    }

    fn apply(&self, src: &[f64], channels: usize) -> Vec<f64> {
        if self.factor == 1 {
            return src.to_vec();
        }
        let mut out = vec![0.0; self.w * self.h * channels];
        for y in 0..self.full_h {
            for x in 0..self.full_w {
                let o = (y / self.factor) * self.w + x / self.factor;
                for c in 0..channels {
                    out[o * channels + c] += src[(y * self.full_w + x) * channels + c];
                }
            }
        }
        for y in 0..self.h {
            for x in 0..self.w {
                let n = self.count(x, y);
                for c in 0..channels {
                    out[(y * self.w + x) * channels + c] /= n;
                }
            }
        }
        out
    }

    /// Transpose of the single-channel `apply`.
    fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        if self.factor == 1 {
            return grad.to_vec();
        }
        let mut out = vec![0.0; self.full_w * self.full_h];
        for y in 0..self.full_h {
            for x in 0..self.full_w {
                let (bx, by) = (x / self.factor, y / self.factor);
                out[y * self.full_w + x] = grad[by * self.w + bx] / self.count(bx, by);
            }
        }
        out
    }
}

/// Matrix-free matting Laplacian over 3×3 windows of a guide image.
///
/// Guides larger than 128 px on a side are area-downsampled first; maps fed
/// to [`MattingLaplacian::quadratic`] are downsampled the same way.
#[derive(Debug, Clone)]
pub struct MattingLaplacian {
    windows: Vec<Window>,
    guide: Vec<f64>,
    down: Downsample,
}

impl MattingLaplacian {
    pub fn new(guide: &ImagePlane) -> Result<Self> {
        Self::with_max_side(guide, LAPLACIAN_MAX_SIDE)
    }

    pub fn with_max_side(guide: &ImagePlane, max_side: usize) -> Result<Self> {
        check_color(guide)?;
        let down = Downsample::new(guide.width(), guide.height(), max_side.max(1));
        let small = down.apply(guide.data(), 3);
        let (w, h) = (down.w, down.h);
        let mut windows = Vec::new();
        for cy in 1..h.saturating_sub(1) {
            for cx in 1..w.saturating_sub(1) {
                let mut mean = [0.0; 3];
                for y in cy - 1..=cy + 1 {
                    for x in cx - 1..=cx + 1 {
                        for c in 0..3 {
                            mean[c] += small[(y * w + x) * 3 + c] / 9.0;
                        }
                    }
                }
                let mut cov = nalgebra::Matrix3::<f64>::zeros();
                for y in cy - 1..=cy + 1 {
                    for x in cx - 1..=cx + 1 {
                        let d = nalgebra::Vector3::from_fn(|c, _| small[(y * w + x) * 3 + c] - mean[c]);
                        cov += d * d.transpose() / 9.0;
                    }
                }
                cov += nalgebra::Matrix3::identity() * (LAPLACIAN_EPS / 9.0);
                let inv = cov
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("singular matting window covariance".into()))?;
                windows.push(Window {
                    x: cx,
                    y: cy,
                    mean,
                    inv: [0, 1, 2].map(|r| [0, 1, 2].map(|c| inv[(r, c)])),
                });
            }
        }
        Ok(Self {
            windows,
            guide: small,
            down,
        })
    }

    /// Resolution the Laplacian acts on.
    pub fn size(&self) -> (usize, usize) {
        (self.down.w, self.down.h)
    }

    /// `L·x` at the Laplacian's own resolution.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.down.w * self.down.h);
        let guide_small = &self.guide;
        let w = self.down.w;
        let mut y = vec![0.0; x.len()];
        for win in &self.windows {
            let mut mx = 0.0;
            let mut v = [0.0; 3];
            for yy in win.y - 1..=win.y + 1 {
                for xx in win.x - 1..=win.x + 1 {
                    let p = yy * w + xx;
                    mx += x[p];
                    for c in 0..3 {
                        v[c] += (guide_small[p * 3 + c] - win.mean[c]) * x[p];
                    }
                }
            }
            mx /= 9.0;
            let v = v.map(|t| t / 9.0);
            let u = [0, 1, 2].map(|r| win.inv[r][0] * v[0] + win.inv[r][1] * v[1] + win.inv[r][2] * v[2]);
            for yy in win.y - 1..=win.y + 1 {
                for xx in win.x - 1..=win.x + 1 {
                    let p = yy * w + xx;
                    let proj: f64 = (0..3).map(|c| (guide_small[p * 3 + c] - win.mean[c]) * u[c]).sum();
                    y[p] += x[p] - mx - proj;
                }
            }
        }
        y
    }

    /// `xᵀ L x` of a full-resolution map and its gradient.
    pub fn quadratic(&self, x: &ImagePlane) -> Result<(f64, ImagePlane)> {
        if x.width() != self.down.full_w || x.height() != self.down.full_h || x.channels() != 1 {
            return Err(Error::shape("map does not match the Laplacian guide"));
        }
        let xs = self.down.apply(x.data(), 1);
        let lx = self.apply(&xs);
        let value: f64 = xs.iter().zip(&lx).map(|(a, b)| a * b).sum();
        let grad_small: Vec<f64> = lx.iter().map(|v| 2.0 * v).collect();
        let grad = self.down.adjoint(&grad_small);
        Ok((value, ImagePlane::from_vec(x.width(), x.height(), 1, grad)?))
    }
}

/// `L·x` for a guide and map of the same (≤ 128 px) size.
pub fn matting_laplacian_apply(guide: &ImagePlane, x: &ImagePlane) -> Result<ImagePlane> {
    if guide.width() != x.width() || guide.height() != x.height() || x.channels() != 1 {
        return Err(Error::shape("guide and map sizes differ"));
    }
    let lap = MattingLaplacian::with_max_side(guide, usize::MAX)?;
    let y = lap.apply(x.data());
    ImagePlane::from_vec(x.width(), x.height(), 1, y)
}

fn check_maps(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    a.ensure_same_shape(b, "transmission maps")?;
    if a.channels() != 1 {
        return Err(Error::shape("transmission maps must have one channel"));
    }
    Ok(())
}

/// Smoothness-plus-fidelity prior loss on the rendered transmission map.
///
/// `t̂ᵀ L t̂ + λ‖t_dcp − t̂‖²`, with `L` the matting Laplacian of the view's
/// guide image. With `literal` the quadratic is evaluated on `t_dcp` instead,
/// which makes it a constant.
pub fn dcp_loss(
    t_rendered: &ImagePlane,
    t_dcp: &ImagePlane,
    laplacian: &MattingLaplacian,
    lambda_smooth: f64,
    literal: bool,
) -> Result<(f64, ImagePlane)> {
    check_maps(t_rendered, t_dcp)?;
    let (smooth, mut grad) = if literal {
        let (v, _) = laplacian.quadratic(t_dcp)?;
        (v, ImagePlane::new(t_rendered.width(), t_rendered.height(), 1))
    } else {
        laplacian.quadratic(t_rendered)?
    };
    let mut fidelity = 0.0;
    for ((g, &t), &d) in grad.data_mut().iter_mut().zip(t_rendered.data()).zip(t_dcp.data()) {
        let diff = d - t;
        fidelity += diff * diff;
        *g -= 2.0 * lambda_smooth * diff;
    }
    Ok((smooth + lambda_smooth * fidelity, grad))
}

/// Mean absolute difference to the bright-channel map.
pub fn bcp_loss(t_rendered: &ImagePlane, t_bcp: &ImagePlane) -> Result<(f64, ImagePlane)> {
    check_maps(t_rendered, t_bcp)?;
    let n = t_rendered.pixel_count() as f64;
    let mut loss = 0.0;
    let grad = t_rendered
        .data()
        .iter()
        .zip(t_bcp.data())
        .map(|(&t, &b)| {
            let d = b - t;
            loss += d.abs();
            if d > 0.0 {
                -1.0 / n
            } else if d < 0.0 {
                1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, ImagePlane::from_vec(t_rendered.width(), t_rendered.height(), 1, grad)?))
}
