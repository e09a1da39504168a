//! Regular, non-overlapping grid decomposition of rooftop crops.

use crate::geodata::RooftopImage;
use crate::image::Image;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TileError {
    #[error("grid size {0} is below the minimum of 8 pixels")]
    GridTooSmall(usize),
    #[error("min_coverage {0} is outside (0, 1]")]
    BadCoverage(f64),
    #[error("rooftop {0} is empty")]
    EmptyRooftop(String),
    #[error("no usable grids for rooftop {0}")]
    NoUsableGrids(String),
}

/// One `g × g × 3` cell of the tiling lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTile {
    pub rooftop_id: String,
    /// (row, col) in lattice units.
    pub index: (usize, usize),
    pub pixels: Image,
    /// Fraction of the `g × g` cell covered by valid rooftop pixels, before padding.
    pub coverage: f64,
}

/// Per-cell bookkeeping used by the `tile --stats` report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileStats {
    pub kept: usize,
    pub total: usize,
}

pub fn lattice_dims(width: usize, height: usize, g: usize) -> (usize, usize) {
    (height.div_ceil(g), width.div_ceil(g))
}

/// Valid-pixel coverage of every lattice cell, row-major.
pub fn cell_coverages(rooftop: &RooftopImage, g: usize) -> Vec<f64> {
    let (rows, cols) = lattice_dims(rooftop.width(), rooftop.height(), g);
    let mut counts = vec![0usize; rows * cols];
    let mask = &rooftop.valid_mask;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                counts[(y / g) * cols + x / g] += 1;
            }
        }
    }
    let area = (g * g) as f64;
    counts.into_iter().map(|c| c as f64 / area).collect()
}

/// Splits `rooftop` into `g × g` tiles anchored at the crop origin.
///
/// Cells with coverage below `min_coverage` are dropped. Inside a kept tile,
/// pixels outside the footprint are zeroed and cells that run past the crop are
/// padded by replicating the last row/column.
pub fn tile(rooftop: &RooftopImage, g: usize, min_coverage: f64) -> Result<Vec<GridTile>, TileError> {
    if g < 8 {
        return Err(TileError::GridTooSmall(g));
    }
    if !(min_coverage > 0.0 && min_coverage <= 1.0) {
        return Err(TileError::BadCoverage(min_coverage));
    }
    let (w, h) = (rooftop.width(), rooftop.height());
    if w == 0 || h == 0 {
        return Err(TileError::EmptyRooftop(rooftop.rooftop_id.clone()));
    }
    let (_, cols) = lattice_dims(w, h, g);
    let coverages = cell_coverages(rooftop, g);
    let src = &rooftop.pixels;
    let mask = &rooftop.valid_mask;

    let mut tiles = Vec::new();
    for (cell, &coverage) in coverages.iter().enumerate() {
        if coverage < min_coverage || coverage == 0.0 {
            continue;
        }
        let (row, col) = (cell / cols, cell % cols);
        let (x0, y0) = (col * g, row * g);
        let mut pixels = Image::new(g, g, 3);
        for ty in 0..g {
            let sy = (y0 + ty).min(h - 1);
            for tx in 0..g {
                let sx = (x0 + tx).min(w - 1);
                if mask.get(sx, sy) {
                    pixels.pixel_mut(tx, ty).copy_from_slice(src.pixel(sx, sy));
                }
            }
        }
        tiles.push(GridTile {
            rooftop_id: rooftop.rooftop_id.clone(),
            index: (row, col),
            pixels,
            coverage,
        });
    }
    if tiles.is_empty() {
        return Err(TileError::NoUsableGrids(rooftop.rooftop_id.clone()));
    }
    Ok(tiles)
}

/// Like [`tile`], but a rooftop with no cell above `min_coverage` keeps its
/// best-covered cell(s) instead of failing.
pub fn tile_or_best(rooftop: &RooftopImage, g: usize, min_coverage: f64) -> Result<Vec<GridTile>, TileError> {
    match tile(rooftop, g, min_coverage) {
        Err(TileError::NoUsableGrids(id)) => {
            let best = cell_coverages(rooftop, g).into_iter().fold(0.0, f64::max);
            if best > 0.0 { tile(rooftop, g, best) } else { Err(TileError::NoUsableGrids(id)) }
        }
        other => other,
    }
}

pub fn tile_stats(rooftop: &RooftopImage, g: usize, min_coverage: f64) -> TileStats {
    let cov = cell_coverages(rooftop, g);
    TileStats {
        kept: cov.iter().filter(|&&c| c >= min_coverage && c > 0.0).count(),
        total: cov.len(),
    }
}
