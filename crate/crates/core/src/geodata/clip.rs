use super::{FootprintEntry, GeoError, GeoRaster, Ring, RooftopImage};
use crate::image::Mask;

/// Even-odd test over all rings. Points on an edge count as inside.
pub fn point_in_polygon(p: (f64, f64), rings: &[Ring]) -> bool {
    let mut inside = false;
    for ring in rings {
        for seg in ring.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if on_segment(p, a, b) {
                return true;
            }
            if (a.1 > p.1) != (b.1 > p.1) {
                let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
                if p.0 < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let scale = 1.0 + a.0.abs().max(a.1.abs()).max(b.0.abs()).max(b.1.abs());
    if cross.abs() > 1e-12 * scale * len.max(1e-300) {
        return false;
    }
    let eps = 1e-12 * scale;
    p.0 >= a.0.min(b.0) - eps
        && p.0 <= a.0.max(b.0) + eps
        && p.1 >= a.1.min(b.1) - eps
        && p.1 <= a.1.max(b.1) + eps
}

/// Snaps values within 1e-9 of an integer before taking floor/ceil so that
/// round-off in the inverse transform cannot add a spurious row or column.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 { r } else { v }
}

/// Clips the footprint's pixel bounding box out of `raster` and marks the pixels
/// whose centres fall inside the polygon.
pub fn clip_rooftop(
    raster: &GeoRaster,
    entry: &FootprintEntry,
    city_id: &str,
) -> Result<RooftopImage, GeoError> {
    let (x0, y0, x1, y1) = entry.bbox();
    let inv = raster.inverse();
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)].map(|(x, y)| inv.apply(x, y));
    let min_c = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_c = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let min_r = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let max_r = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);

    let (w, h) = (raster.width() as f64, raster.height() as f64);
    let c0 = snap(min_c).floor().max(0.0);
    let c1 = snap(max_c).ceil().min(w);
    let r0 = snap(min_r).floor().max(0.0);
    let r1 = snap(max_r).ceil().min(h);
    if !(c0 < c1 && r0 < r1) {
        return Err(GeoError::OutsideRaster(entry.rooftop_id.clone()));
    }
    let (c0, c1, r0, r1) = (c0 as usize, c1 as usize, r0 as usize, r1 as usize);
    let (cw, ch) = (c1 - c0, r1 - r0);

    let t = raster.transform();
    let mut mask = Mask::new(cw, ch);
    for row in 0..ch {
        for col in 0..cw {
            let centre = t.apply((c0 + col) as f64 + 0.5, (r0 + row) as f64 + 0.5);
            if point_in_polygon(centre, &entry.rings) {
                mask.set(col, row, true);
            }
        }
    }
    if mask.count() == 0 {
        return Err(GeoError::EmptyMask(entry.rooftop_id.clone()));
    }
    Ok(RooftopImage {
        rooftop_id: entry.rooftop_id.clone(),
        city_id: city_id.to_string(),
        pixels: raster.pixels().crop(c0, r0, cw, ch),
        valid_mask: mask,
        label: entry.label,
        transform: t.offset(c0 as f64, r0 as f64),
    })
}
