//! Tile binning and per-tile depth ordering.

use rayon::prelude::*;

use crate::projection::ProjectedGaussian;

/// Tile edge length in pixels.
pub const TILE_SIZE: u32 = 16;

/// Per-tile lists of indices into the projected-Gaussian slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub width: u32,
    pub height: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Row-major over tiles.
    pub bins: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn empty(width: u32, height: u32) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        TileGrid {
            width,
            height,
            tiles_x,
            tiles_y,
            bins: vec![Vec::new(); (tiles_x * tiles_y) as usize],
        }
    }

    pub fn bin(&self, tx: u32, ty: u32) -> &[u32] {
        &self.bins[(ty * self.tiles_x + tx) as usize]
    }

    /// The bin of the tile containing pixel `(col, row)`.
    pub fn bin_for_pixel(&self, col: u32, row: u32) -> &[u32] {
        self.bin(col / TILE_SIZE, row / TILE_SIZE)
    }

    /// Pixel rectangle `[x0, x1] × [y0, y1]` covered by a tile, clipped to the image.
    pub fn tile_rect(&self, tx: u32, ty: u32) -> ([f64; 2], [f64; 2]) {
        let x0 = (tx * TILE_SIZE) as f64;
        let y0 = (ty * TILE_SIZE) as f64;
        let x1 = ((tx + 1) * TILE_SIZE).min(self.width) as f64;
        let y1 = ((ty + 1) * TILE_SIZE).min(self.height) as f64;
        ([x0, y0], [x1, y1])
    }
}

/// Closed-interval overlap test between a footprint and a tile rectangle.
pub fn box_intersects_tile(g: &ProjectedGaussian, grid: &TileGrid, tx: u32, ty: u32) -> bool {
    let (lo, hi) = g.bounding_box();
    let (t0, t1) = grid.tile_rect(tx, ty);
    lo.x <= t1[0] && hi.x >= t0[0] && lo.y <= t1[1] && hi.y >= t0[1]
}

/// Inclusive range of tile indices along one axis whose closed span
/// `[k·16, min((k+1)·16, limit)]` meets `[lo, hi]`.
fn tile_span(lo: f64, hi: f64, limit: u32, tiles: u32) -> Option<(u32, u32)> {
    if hi < 0.0 || lo > limit as f64 || tiles == 0 {
        return None;
    }
    let ts = TILE_SIZE as f64;
    // first k with (k+1)·16 >= lo
    let first = ((lo / ts).ceil() - 1.0).max(0.0) as u32;
    let last = ((hi / ts).floor().max(0.0) as u32).min(tiles - 1);
    (first <= last).then_some((first, last))
}

/// Bins every projected Gaussian into each tile its square footprint touches.
/// Bins come out in ascending index order, i.e. not yet depth sorted.
pub fn assign_tiles(projected: &[ProjectedGaussian], width: u32, height: u32) -> TileGrid {
    let mut grid = TileGrid::empty(width, height);
    for (i, g) in projected.iter().enumerate() {
        let (lo, hi) = g.bounding_box();
        let Some((x0, x1)) = tile_span(lo.x, hi.x, width, grid.tiles_x) else {
            continue;
        };
        let Some((y0, y1)) = tile_span(lo.y, hi.y, height, grid.tiles_y) else {
            continue;
        };
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                // The span is conservative at clipped image edges.
                if box_intersects_tile(g, &grid, tx, ty) {
                    grid.bins[(ty * grid.tiles_x + tx) as usize].push(i as u32);
                }
            }
        }
    }
    grid
}

/// Total order used everywhere Gaussians are sorted: depth, then source index.
pub fn depth_order(a: &ProjectedGaussian, b: &ProjectedGaussian) -> std::cmp::Ordering {
    a.depth
        .total_cmp(&b.depth)
        .then(a.source_index.cmp(&b.source_index))
}

/// Sorts every bin front to back.
pub fn sort_bins(mut grid: TileGrid, projected: &[ProjectedGaussian]) -> TileGrid {
    grid.bins.par_iter_mut().for_each(|bin| {
        bin.sort_by(|&a, &b| depth_order(&projected[a as usize], &projected[b as usize]));
    });
    grid
}
