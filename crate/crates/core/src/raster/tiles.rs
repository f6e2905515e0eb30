use std::cmp::Ordering;

use super::project::ProjectedGaussian;

pub const DEFAULT_TILE_SIZE: usize = 16;

/// Per-tile lists of indices into the projected Gaussians, each sorted front
/// to back.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBins {
    pub tile_size: usize,
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn tile(&self, tx: usize, ty: usize) -> &[u32] {
        &self.lists[ty * self.tiles_x + tx]
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of tile `t`.
    pub fn tile_rect(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(self.width),
            (y0 + self.tile_size).min(self.height),
        )
    }
}

/// Front-to-back order: camera depth, ties by source index.
pub fn depth_order(a: &ProjectedGaussian, b: &ProjectedGaussian) -> Ordering {
    a.camera_depth
        .partial_cmp(&b.camera_depth)
        .unwrap_or(Ordering::Equal)
        .then(a.source_index.cmp(&b.source_index))
}

/// Assigns every projected Gaussian to each tile its footprint disc touches
/// and sorts every tile list front to back.
pub fn bin_and_sort(
    projected: &[ProjectedGaussian],
    width: usize,
    height: usize,
    tile_size: usize,
) -> TileBins {
    assert!(tile_size > 0, "tile size must be positive");
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let ts = tile_size as f64;

    for (idx, pg) in projected.iter().enumerate() {
        let [u, v] = pg.mean2d;
        let r = pg.screen_radius;
        let tx0 = ((u - r) / ts).floor().max(0.0) as usize;
        let ty0 = ((v - r) / ts).floor().max(0.0) as usize;
        let tx1 = (((u + r) / ts).floor() as isize).min(tiles_x as isize - 1);
        let ty1 = (((v + r) / ts).floor() as isize).min(tiles_y as isize - 1);
        if tx1 < 0 || ty1 < 0 {
            continue;
        }
        for ty in ty0..=ty1 as usize {
            for tx in tx0..=tx1 as usize {
                let x0 = (tx * tile_size) as f64;
                let y0 = (ty * tile_size) as f64;
                let x1 = ((tx + 1) * tile_size).min(width) as f64;
                let y1 = ((ty + 1) * tile_size).min(height) as f64;
                let dx = u - u.clamp(x0, x1);
                let dy = v - v.clamp(y0, y1);
                if dx * dx + dy * dy <= r * r {
                    lists[ty * tiles_x + tx].push(idx as u32);
                }
            }
        }
    }

    for list in &mut lists {
        list.sort_by(|&a, &b| depth_order(&projected[a as usize], &projected[b as usize]));
    }

    TileBins {
        tile_size,
        width,
        height,
        tiles_x,
        tiles_y,
        lists,
    }
}
