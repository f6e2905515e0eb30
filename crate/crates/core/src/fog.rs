//! Per-Gaussian atmospheric scattering: depth → transmission, learnable
//! atmospheric light, and the foggy color mix.

use serde::{Deserialize, Serialize};

use crate::scene::{logit, sigmoid};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_ATMOSPHERIC_LIGHT: f64 = 0.8;

/// Learnable fog parameters shared by all Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FogParams {
    /// Scattering coefficient: the single weight of the depth → transmission
    /// map. Applied to normalized depth.
    pub beta_weight: f64,
    /// Unconstrained RGB atmospheric light; `A = logistic(atmos_latent)`.
    pub atmos_latent: [f64; 3],
    /// Squash `exp(−βd)` through a logistic.
    pub use_sigmoid: bool,
}

impl Default for FogParams {
    fn default() -> Self {
        Self {
            beta_weight: DEFAULT_BETA,
            atmos_latent: [logit(DEFAULT_ATMOSPHERIC_LIGHT); 3],
            use_sigmoid: true,
        }
    }
}

impl FogParams {
    pub fn with_light(beta: f64, light: [f64; 3], use_sigmoid: bool) -> Self {
        Self {
            beta_weight: beta,
            atmos_latent: light.map(logit),
            use_sigmoid,
        }
    }

    pub fn atmospheric_light(&self) -> [f64; 3] {
        self.atmos_latent.map(sigmoid)
    }
}

/// Min-max normalizes camera depths of the Gaussians seen by one view.
///
/// The result is treated as a constant downstream: no gradient flows back to
/// the positions through it. Degenerate ranges map to all zeros.
pub fn normalize_depths(depths: &[f64]) -> Vec<f64> {
    let (lo, hi) = depths
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; depths.len()];
    }
    depths.iter().map(|&d| (d - lo) / range).collect()
}

/// Transmission of one Gaussian and its derivative w.r.t. β.
#[inline]
pub fn transmission_with_grad(d_norm: f64, fog: &FogParams) -> (f64, f64) {
    let x = fog.beta_weight * d_norm;
    // ReLU guard: zero derivative on the flat side and at the kink.
    let (x, dx_dbeta) = if x > 0.0 { (x, d_norm) } else { (0.0, 0.0) };
    let e = (-x).exp();
    if fog.use_sigmoid {
        let t = sigmoid(e);
        (t, -e * t * (1.0 - t) * dx_dbeta)
    } else {
        (e, -e * dx_dbeta)
    }
}

pub fn gaussian_transmission(d_norm: &[f64], fog: &FogParams) -> Vec<f64> {
    d_norm.iter().map(|&d| transmission_with_grad(d, fog).0).collect()
}

/// `G_f = G_c·t + A·(1 − t)` per channel.
pub fn fog_colors(clear: &[[f64; 3]], transmission: &[f64], fog: &FogParams) -> Vec<[f64; 3]> {
    let a = fog.atmospheric_light();
    clear
        .iter()
        .zip(transmission)
        .map(|(c, &t)| [0, 1, 2].map(|k| c[k] * t + a[k] * (1.0 - t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FogGrads {
    pub clear: Vec<[f64; 3]>,
    pub beta_weight: f64,
    pub atmos_latent: [f64; 3],
}

/// Chain rule through the transmission map and the color mix.
///
/// `grad_foggy` is the upstream gradient on the foggy colors and
/// `grad_transmission` the one on the per-Gaussian transmission channel
/// (from the rendered transmission map).
pub fn fog_backward(
    clear: &[[f64; 3]],
    d_norm: &[f64],
    fog: &FogParams,
    grad_foggy: &[[f64; 3]],
    grad_transmission: &[f64],
) -> FogGrads {
    let a = fog.atmospheric_light();
    let mut out = FogGrads {
        clear: Vec::with_capacity(clear.len()),
        beta_weight: 0.0,
        atmos_latent: [0.0; 3],
    };
    let mut grad_a = [0.0; 3];
    for i in 0..clear.len() {
        let (t, dt_dbeta) = transmission_with_grad(d_norm[i], fog);
        let g = grad_foggy[i];
        out.clear.push(g.map(|v| v * t));
        let mut grad_t = grad_transmission[i];
        for k in 0..3 {
            grad_a[k] += g[k] * (1.0 - t);
            grad_t += g[k] * (clear[i][k] - a[k]);
        }
        out.beta_weight += grad_t * dt_dbeta;
    }
    for k in 0..3 {
        out.atmos_latent[k] = grad_a[k] * a[k] * (1.0 - a[k]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn physical(beta: f64) -> FogParams {
        FogParams {
            beta_weight: beta,
            use_sigmoid: false,
            ..FogParams::default()
        }
    }

    #[test]
    fn depth_normalization() {
        assert_eq!(normalize_depths(&[1.0, 2.0, 3.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_depths(&[5.0, 5.0]), vec![0.0, 0.0]);
        assert_eq!(normalize_depths(&[1.0, 2.0, 3.0, 5.0]), vec![0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn transmission_values() {
        assert_eq!(gaussian_transmission(&[0.0], &physical(0.7))[0], 1.0);
        let t = gaussian_transmission(&[0.0], &FogParams::default())[0];
        assert!((t - 0.731_058_578_630_004_9).abs() < 1e-15);
        let t = gaussian_transmission(&[1.0], &physical(2f64.ln()))[0];
        assert!((t - 0.5).abs() < 1e-15);
    }

    #[test]
    fn negative_beta_is_guarded() {
        let (t, dt) = transmission_with_grad(0.5, &physical(-1.0));
        assert_eq!((t, dt), (1.0, 0.0));
    }

    #[test]
    fn color_mix() {
        let fog = FogParams::with_light(0.0, [0.8; 3], false);
        let c = [[1.0, 0.0, 0.0]];
        let out = fog_colors(&c, &[0.5], &fog)[0];
        for (o, e) in out.iter().zip([0.9, 0.4, 0.4]) {
            assert!((o - e).abs() < 1e-12);
        }
        assert_eq!(fog_colors(&c, &[1.0], &fog)[0], c[0]);
        let a = fog.atmospheric_light();
        let at_zero = fog_colors(&c, &[0.0], &fog)[0];
        for k in 0..3 {
            assert!((at_zero[k] - a[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_zero_upstream() {
        let g = fog_backward(&[[0.3, 0.2, 0.1]], &[0.5], &FogParams::default(), &[[0.0; 3]], &[0.0]);
        assert_eq!(g.clear, vec![[0.0; 3]]);
        assert_eq!(g.beta_weight, 0.0);
        assert_eq!(g.atmos_latent, [0.0; 3]);
    }

    #[test]
    fn color_derivative_wrt_transmission() {
        // Only the transmission path: ∂G_f/∂t = G_c − A, so ∂/∂β = (G_c − A)·∂t/∂β.
        let fog = FogParams::with_light(0.9, [0.7, 0.8, 0.6], false);
        let c = [[0.2, 0.9, 0.4]];
        let (_, dt) = transmission_with_grad(0.6, &fog);
        let g = fog_backward(&c, &[0.6], &fog, &[[1.0, 0.0, 0.0]], &[0.0]);
        assert!((g.beta_weight - (0.2 - 0.7) * dt).abs() < 1e-15);
    }
}
