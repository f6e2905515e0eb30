//! Synthetic fog from clear images and depth, and the analytic inverse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::priors::T_FLOOR;

pub const BETA_RANGE: (f64, f64) = (0.4, 1.2);
pub const LIGHT_RANGE: (f64, f64) = (0.7, 0.95);

/// Fog parameters drawn for one synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFog {
    pub beta: f64,
    pub light: [f64; 3],
}

/// Min-max normalizes a depth map; a flat map becomes all zeros.
pub fn normalize_depth_map(depth: &ImagePlane) -> ImagePlane {
    let (lo, hi) = depth.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return ImagePlane::new(depth.width(), depth.height(), 1);
    }
    depth.map(|d| (d - lo) / range)
}

/// Applies `I = J·t + A·(1 − t)` with `t = exp(−β·d_norm)`.
///
/// Depth is normalized per image first. Returns the hazy image and the
/// transmission map.
pub fn synthesize_fog(
    clear: &ImagePlane,
    depth: &ImagePlane,
    beta: f64,
    light: [f64; 3],
) -> Result<(ImagePlane, ImagePlane)> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("scattering coefficient must be >= 0, got {beta}")));
    }
    if clear.channels() != 3 || depth.channels() != 1 {
        return Err(Error::shape("expected an RGB image and a one-channel depth map"));
    }
    if clear.width() != depth.width() || clear.height() != depth.height() {
        return Err(Error::shape(format!(
            "image is {}x{} but depth is {}x{}",
            clear.width(),
            clear.height(),
            depth.width(),
            depth.height()
        )));
    }
    if depth.data().iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("depth must be finite and non-negative"));
    }
    let t_map = normalize_depth_map(depth).map(|d| (-beta * d).exp());
    let hazy = ImagePlane::from_fn(clear.width(), clear.height(), 3, |x, y, c| {
        let t = t_map.get(x, y, 0);
        clear.get(x, y, c) * t + light[c] * (1.0 - t)
    });
    Ok((hazy, t_map))
}

/// `J = (I − A·(1 − t)) / t` with `t` floored at 0.05 and `J` clamped to
/// `[0, 1]`.
pub fn analytic_dehaze(hazy: &ImagePlane, t_map: &ImagePlane, light: [f64; 3]) -> Result<ImagePlane> {
    if hazy.channels() != 3 || t_map.channels() != 1 {
        return Err(Error::shape("expected an RGB image and a one-channel transmission map"));
    }
    if hazy.width() != t_map.width() || hazy.height() != t_map.height() {
        return Err(Error::shape("transmission map does not match the image"));
    }
    Ok(ImagePlane::from_fn(hazy.width(), hazy.height(), 3, |x, y, c| {
        let t = t_map.get(x, y, 0).max(T_FLOOR);
        ((hazy.get(x, y, c) - light[c] * (1.0 - t)) / t).clamp(0.0, 1.0)
    }))
}

/// Draws β and a per-channel atmospheric light from a seeded stream.
pub fn sample_scene_params(seed: u64) -> SceneFog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = rng.random_range(BETA_RANGE.0..=BETA_RANGE.1);
    let light = [0; 3].map(|_| rng.random_range(LIGHT_RANGE.0..=LIGHT_RANGE.1));
    SceneFog { beta, light }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_depth(w: usize, h: usize) -> ImagePlane {
        ImagePlane::from_fn(w, h, 1, |x, y, _| (x + 2 * y) as f64)
    }

    #[test]
    fn zero_beta_is_identity() {
        let j = ImagePlane::from_fn(5, 4, 3, |x, y, c| ((x + y + c) % 4) as f64 / 4.0);
        let (i, t) = synthesize_fog(&j, &gradient_depth(5, 4), 0.0, [0.8; 3]).unwrap();
        assert_eq!(i, j);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hand_evaluated_pixel() {
        let j = ImagePlane::from_fn(2, 1, 3, |_, _, c| if c == 0 { 1.0 } else { 0.0 });
        let d = ImagePlane::from_fn(2, 1, 1, |x, _, _| x as f64);
        let (i, t) = synthesize_fog(&j, &d, 2f64.ln(), [0.8; 3]).unwrap();
        assert!((t.get(1, 0, 0) - 0.5).abs() < 1e-15);
        for (c, e) in [0.9, 0.4, 0.4].iter().enumerate() {
            assert!((i.get(1, 0, c) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn heavy_fog_tends_to_light() {
        let j = ImagePlane::filled(3, 1, 3, 0.1);
        let d = ImagePlane::from_fn(3, 1, 1, |x, _, _| x as f64);
        let (i, _) = synthesize_fog(&j, &d, 60.0, [0.7, 0.8, 0.9]).unwrap();
        for (c, a) in [0.7, 0.8, 0.9].iter().enumerate() {
            assert!((i.get(2, 0, c) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_beta_rejected() {
        let j = ImagePlane::filled(2, 2, 3, 0.5);
        assert!(synthesize_fog(&j, &gradient_depth(2, 2), -0.1, [0.8; 3]).is_err());
    }

    #[test]
    fn dehaze_degenerate_inputs() {
        let i = ImagePlane::filled(3, 3, 3, 0.8);
        let t = ImagePlane::filled(3, 3, 1, 1.0);
        assert_eq!(analytic_dehaze(&i, &t, [0.8; 3]).unwrap(), i);
        let t0 = ImagePlane::filled(3, 3, 1, 0.0);
        let j = analytic_dehaze(&i, &t0, [0.8; 3]).unwrap();
        assert!(j.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sampling_ranges() {
        assert_eq!(sample_scene_params(7), sample_scene_params(7));
        assert_ne!(sample_scene_params(7), sample_scene_params(8));
        for s in 0..1000 {
            let p = sample_scene_params(s);
            assert!((BETA_RANGE.0..=BETA_RANGE.1).contains(&p.beta));
            assert!(p.light.iter().all(|a| (LIGHT_RANGE.0..=LIGHT_RANGE.1).contains(a)));
        }
    }
}
