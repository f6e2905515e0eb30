//! Front-to-back alpha compositing of depth-sorted splats and its exact
//! reverse-mode derivative.

use rayon::prelude::*;

use super::project::ProjectedGaussian;
use super::tiles::TileBins;
use crate::error::{Error, Result};

/// Upper clamp on per-splat alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Splats below this alpha at a pixel are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops before transmittance would fall below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Squared Mahalanobis radius of a splat's support (its 3σ ellipse, which
/// lies inside the disc used for tile binning).
pub const SUPPORT_MAHALANOBIS_SQ: f64 = 9.0;

/// Per-pixel compositing result for `n_channels` blended channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeOutput {
    pub width: usize,
    pub height: usize,
    pub n_channels: usize,
    /// `height × width × n_channels`, row-major.
    pub values: Vec<f64>,
    /// Transmittance left after the last contributing splat.
    pub final_transmittance: Vec<f64>,
    /// Number of tile-list entries walked per pixel (replay bound).
    pub n_contrib: Vec<u32>,
}

impl CompositeOutput {
    pub fn alpha(&self) -> Vec<f64> {
        self.final_transmittance.iter().map(|t| 1.0 - t).collect()
    }
}

/// Gradients with respect to the compositing inputs, indexed like the
/// projected Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeGrads {
    pub n_channels: usize,
    pub channels: Vec<f64>,
    pub opacity: Vec<f64>,
    pub mean2d: Vec<[f64; 2]>,
    /// `(a, b, c)` conic gradient, `b` counted once.
    pub conic: Vec<[f64; 3]>,
}

impl CompositeGrads {
    fn zeros(n: usize, n_channels: usize) -> Self {
        Self {
            n_channels,
            channels: vec![0.0; n * n_channels],
            opacity: vec![0.0; n],
            mean2d: vec![[0.0; 2]; n],
            conic: vec![[0.0; 3]; n],
        }
    }
}

struct SplatEval {
    alpha: f64,
    gauss: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

/// Compact copy of the fields the per-pixel loops read.
#[derive(Clone, Copy)]
struct Splat {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
}

fn tile_splats(list: &[u32], projected: &[ProjectedGaussian], opacities: &[f64]) -> Vec<Splat> {
    list.iter()
        .map(|&idx| {
            let pg = &projected[idx as usize];
            Splat {
                mean: pg.mean2d,
                conic: pg.conic,
                opacity: opacities[idx as usize],
            }
        })
        .collect()
}

fn tile_channels(list: &[u32], channels: &[f64], n_ch: usize) -> Vec<f64> {
    list.iter()
        .flat_map(|&idx| channels[idx as usize * n_ch..(idx as usize + 1) * n_ch].iter().copied())
        .collect()
}

/// Alpha of one splat at pixel center `(px, py)`, or `None` if the splat
/// does not contribute there.
#[inline]
fn eval_splat(sp: &Splat, px: f64, py: f64) -> Option<SplatEval> {
    let dx = px - sp.mean[0];
    let dy = py - sp.mean[1];
    let [a, b, c] = sp.conic;
    let maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if !(maha <= SUPPORT_MAHALANOBIS_SQ) {
        return None;
    }
    let gauss = (-0.5 * maha).exp();
    let raw = sp.opacity * gauss;
    let clamped = raw > ALPHA_MAX;
    let alpha = if clamped { ALPHA_MAX } else { raw };
    if alpha < ALPHA_MIN {
        return None;
    }
    Some(SplatEval {
        alpha,
        gauss,
        dx,
        dy,
        clamped,
    })
}

fn check_inputs(
    projected: &[ProjectedGaussian],
    opacities: &[f64],
    channels: &[f64],
    background: &[f64],
) -> Result<usize> {
    let n = projected.len();
    let n_ch = background.len();
    if opacities.len() != n || channels.len() != n * n_ch {
        return Err(Error::shape(format!(
            "compositing inputs: {n} splats, {} opacities, {} channel values for {n_ch} channels",
            opacities.len(),
            channels.len()
        )));
    }
    if let Some(i) = channels.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "channel {} of splat {} is not finite",
            i % n_ch.max(1),
            i / n_ch.max(1)
        )));
    }
    if let Some(i) = opacities.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("opacity of splat {i} is not finite")));
    }
    Ok(n_ch)
}

struct TileForward {
    values: Vec<f64>,
    final_t: Vec<f64>,
    n_contrib: Vec<u32>,
}

/// Blends every channel front to back per pixel. `background` supplies the
/// value each channel takes behind all splats.
pub fn composite_forward(
    bins: &TileBins,
    projected: &[ProjectedGaussian],
    opacities: &[f64],
    channels: &[f64],
    background: &[f64],
) -> Result<CompositeOutput> {
    let n_ch = check_inputs(projected, opacities, channels, background)?;
    let (width, height) = (bins.width, bins.height);

    let tiles: Vec<TileForward> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = bins.tile_rect(t);
            let list = &bins.lists[t];
            let splats = tile_splats(list, projected, opacities);
            let local_ch = tile_channels(list, channels, n_ch);
            let npx = (x1 - x0) * (y1 - y0);
            let mut out = TileForward {
                values: vec![0.0; npx * n_ch],
                final_t: vec![1.0; npx],
                n_contrib: vec![0; npx],
            };
            let mut acc = vec![0.0; n_ch];
            let mut p = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    let mut trans = 1.0;
                    let mut walked = 0u32;
                    for (k, sp) in splats.iter().enumerate() {
                        let Some(s) = eval_splat(sp, px, py) else {
                            continue;
                        };
                        let next = trans * (1.0 - s.alpha);
                        if next < TRANSMITTANCE_MIN {
                            break;
                        }
                        let w = s.alpha * trans;
                        let ch = &local_ch[k * n_ch..(k + 1) * n_ch];
                        for c in 0..n_ch {
                            acc[c] += ch[c] * w;
                        }
                        trans = next;
                        walked = k as u32 + 1;
                    }
                    for c in 0..n_ch {
                        out.values[p * n_ch + c] = acc[c] + background[c] * trans;
                    }
                    out.final_t[p] = trans;
                    out.n_contrib[p] = walked;
                    p += 1;
                }
            }
            out
        })
        .collect();

    let mut result = CompositeOutput {
        width,
        height,
        n_channels: n_ch,
        values: vec![0.0; width * height * n_ch],
        final_transmittance: vec![1.0; width * height],
        n_contrib: vec![0; width * height],
    };
    for (t, tile) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = bins.tile_rect(t);
        let tw = x1 - x0;
        for y in y0..y1 {
            let src = (y - y0) * tw;
            let dst = y * width + x0;
            result.final_transmittance[dst..dst + tw].copy_from_slice(&tile.final_t[src..src + tw]);
            result.n_contrib[dst..dst + tw].copy_from_slice(&tile.n_contrib[src..src + tw]);
            result.values[dst * n_ch..(dst + tw) * n_ch]
                .copy_from_slice(&tile.values[src * n_ch..(src + tw) * n_ch]);
        }
    }
    Ok(result)
}

struct TileBackward {
    channels: Vec<f64>,
    opacity: Vec<f64>,
    mean2d: Vec<[f64; 2]>,
    conic: Vec<[f64; 3]>,
}

/// Reverse of [`composite_forward`]: replays every pixel back to front from
/// its stored final transmittance. `grad_alpha`, when given, is the upstream
/// gradient on the accumulated alpha map `1 − T_final`.
#[allow(clippy::too_many_arguments)]
pub fn composite_backward(
    bins: &TileBins,
    projected: &[ProjectedGaussian],
    opacities: &[f64],
    channels: &[f64],
    background: &[f64],
    forward: &CompositeOutput,
    grad_values: &[f64],
    grad_alpha: Option<&[f64]>,
) -> Result<CompositeGrads> {
    let n_ch = check_inputs(projected, opacities, channels, background)?;
    let npix = bins.width * bins.height;
    if forward.width != bins.width
        || forward.height != bins.height
        || forward.n_channels != n_ch
        || forward.n_contrib.len() != npix
        || forward.final_transmittance.len() != npix
    {
        return Err(Error::shape("compositing replay state does not match the tile bins"));
    }
    if grad_values.len() != npix * n_ch || grad_alpha.is_some_and(|g| g.len() != npix) {
        return Err(Error::shape("upstream gradient maps do not match the render size"));
    }

    let width = bins.width;
    let tiles: Vec<Result<TileBackward>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = bins.tile_rect(t);
            let list = &bins.lists[t];
            let m = list.len();
            let splats = tile_splats(list, projected, opacities);
            let local_ch = tile_channels(list, channels, n_ch);
            let mut g = TileBackward {
                channels: vec![0.0; m * n_ch],
                opacity: vec![0.0; m],
                mean2d: vec![[0.0; 2]; m],
                conic: vec![[0.0; 3]; m],
            };
            let mut behind = vec![0.0; n_ch];
            for y in y0..y1 {
                for x in x0..x1 {
                    let pix = y * width + x;
                    let walked = forward.n_contrib[pix] as usize;
                    if walked > m {
                        return Err(Error::shape(format!(
                            "pixel ({x}, {y}) replays {walked} splats but its tile holds {m}"
                        )));
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let up = &grad_values[pix * n_ch..(pix + 1) * n_ch];
                    let t_final = forward.final_transmittance[pix];
                    let g_alpha_out = grad_alpha.map_or(0.0, |ga| ga[pix]);
                    for c in 0..n_ch {
                        behind[c] = background[c] * t_final;
                    }
                    let mut trans_after = t_final;
                    for k in (0..walked).rev() {
                        let sp = &splats[k];
                        let Some(s) = eval_splat(sp, px, py) else {
                            continue;
                        };
                        let one_minus = 1.0 - s.alpha;
                        let trans = trans_after / one_minus;
                        let w = s.alpha * trans;
                        let ch = &local_ch[k * n_ch..(k + 1) * n_ch];
                        let mut d_alpha = g_alpha_out * t_final / one_minus;
                        for c in 0..n_ch {
                            g.channels[k * n_ch + c] += up[c] * w;
                            d_alpha += up[c] * (ch[c] * trans - behind[c] / one_minus);
                            behind[c] += ch[c] * w;
                        }
                        trans_after = trans;
                        if s.clamped {
                            continue;
                        }
                        g.opacity[k] += d_alpha * s.gauss;
                        let d_power = d_alpha * s.alpha;
                        let [a, b, c] = sp.conic;
                        // power = −½(a dx² + 2b dx dy + c dy²), dx = px − u.
                        g.mean2d[k][0] += d_power * (a * s.dx + b * s.dy);
                        g.mean2d[k][1] += d_power * (b * s.dx + c * s.dy);
                        g.conic[k][0] += d_power * (-0.5 * s.dx * s.dx);
                        g.conic[k][1] += d_power * (-s.dx * s.dy);
                        g.conic[k][2] += d_power * (-0.5 * s.dy * s.dy);
                    }
                }
            }
            Ok(g)
        })
        .collect();

    // Fixed tile order keeps the reduction deterministic.
    let mut grads = CompositeGrads::zeros(projected.len(), n_ch);
    for (t, tile) in tiles.into_iter().enumerate() {
        let tile = tile?;
        for (k, &idx) in bins.lists[t].iter().enumerate() {
            let i = idx as usize;
            for c in 0..n_ch {
                grads.channels[i * n_ch + c] += tile.channels[k * n_ch + c];
            }
            grads.opacity[i] += tile.opacity[k];
            for j in 0..2 {
                grads.mean2d[i][j] += tile.mean2d[k][j];
            }
            for j in 0..3 {
                grads.conic[i][j] += tile.conic[k][j];
            }
        }
    }
    Ok(grads)
}
