//! Per-rooftop rendering: textured roof, clutter, optional PV panels, noise.
//!
//! Roof, clutter, and noise come from one random stream and panels from a
//! second, so a with-PV render and a no-PV render of the same rooftop differ
//! only inside the panel rectangles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::CitySpec;
use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedRoof {
    /// Roof bounding box, ground outside the footprint.
    pub image: Image,
    pub footprint: Mask,
    /// Footprint outline in pixel-corner coordinates, closed.
    pub outline: Vec<(f64, f64)>,
    pub panels: Vec<Rect>,
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn range_f(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 >= r.1 { r.0 } else { rng.random_range(r.0..=r.1) }
}

fn range_u(rng: &mut ChaCha8Rng, r: (usize, usize)) -> usize {
    if r.0 >= r.1 { r.0 } else { rng.random_range(r.0..=r.1) }
}

/// Bilinearly interpolated lattice noise in `[-1, 1]` with the given spacing.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, spacing: f64) -> Vec<f64> {
    let spacing = spacing.max(1.0);
    let gw = (w as f64 / spacing).ceil() as usize + 2;
    let gh = (h as f64 / spacing).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let fy = y as f64 / spacing;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / spacing;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |i: usize, j: usize| lattice[j * gw + i];
            out[y * w + x] = (1.0 - ty) * ((1.0 - tx) * at(x0, y0) + tx * at(x0 + 1, y0))
                + ty * ((1.0 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
        }
    }
    out
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn fill_rect(&mut self, r: Rect, color: [f64; 3], mask: Option<&Mask>) {
        for y in r.y..(r.y + r.h).min(self.h) {
            for x in r.x..(r.x + r.w).min(self.w) {
                if mask.is_none_or(|m| m.get(x, y)) {
                    self.px[y * self.w + x] = color;
                }
            }
        }
    }

    fn fill_disc(&mut self, cx: f64, cy: f64, radius: f64, color: [f64; 3], mask: &Mask) {
        for y in 0..self.h {
            for x in 0..self.w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= radius * radius && mask.get(x, y) {
                    self.px[y * self.w + x] = color;
                }
            }
        }
    }
}

/// Footprint: a rectangle, or an L-shape with one corner cut away.
fn footprint(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (Mask, Vec<(f64, f64)>) {
    let (wf, hf) = (w as f64, h as f64);
    if rng.random_bool(0.6) {
        return (
            Mask::full(w, h),
            vec![(0.0, 0.0), (wf, 0.0), (wf, hf), (0.0, hf), (0.0, 0.0)],
        );
    }
    let cw = (w as f64 * rng.random_range(0.25..0.4)).round() as usize;
    let ch = (h as f64 * rng.random_range(0.25..0.4)).round() as usize;
    let corner = rng.random_range(0..4);
    let (cwf, chf) = (cw as f64, ch as f64);
    let mut mask = Mask::full(w, h);
    let cut = match corner {
        0 => Rect { x: 0, y: 0, w: cw, h: ch },
        1 => Rect { x: w - cw, y: 0, w: cw, h: ch },
        2 => Rect { x: w - cw, y: h - ch, w: cw, h: ch },
        _ => Rect { x: 0, y: h - ch, w: cw, h: ch },
    };
    for y in 0..h {
        for x in 0..w {
            if cut.contains(x, y) {
                mask.set(x, y, false);
            }
        }
    }
    let outline = match corner {
        0 => vec![(cwf, 0.0), (wf, 0.0), (wf, hf), (0.0, hf), (0.0, chf), (cwf, chf), (cwf, 0.0)],
        1 => vec![(0.0, 0.0), (wf - cwf, 0.0), (wf - cwf, chf), (wf, chf), (wf, hf), (0.0, hf), (0.0, 0.0)],
        2 => vec![(0.0, 0.0), (wf, 0.0), (wf, hf - chf), (wf - cwf, hf - chf), (wf - cwf, hf), (0.0, hf), (0.0, 0.0)],
        _ => vec![(0.0, 0.0), (wf, 0.0), (wf, hf), (cwf, hf), (cwf, hf - chf), (0.0, hf - chf), (0.0, 0.0)],
    };
    (mask, outline)
}

fn rect_inside(mask: &Mask, r: Rect, margin: usize) -> bool {
    if r.x < margin || r.y < margin || r.x + r.w + margin > mask.width() || r.y + r.h + margin > mask.height() {
        return false;
    }
    (r.y - margin..r.y + r.h + margin).all(|y| (r.x - margin..r.x + r.w + margin).all(|x| mask.get(x, y)))
}

fn place_panels(rng: &mut ChaCha8Rng, spec: &CitySpec, mask: &Mask) -> Vec<(Rect, usize)> {
    let count = range_u(rng, spec.pv_panel_count_range).max(1);
    let mut placed: Vec<(Rect, usize)> = Vec::new();
    for _ in 0..count {
        let cell = range_u(rng, spec.pv_cell_size_range).max(2);
        let mut rows = range_u(rng, spec.pv_cell_grid.0).max(1);
        let mut cols = range_u(rng, spec.pv_cell_grid.1).max(1);
        if rng.random_bool(0.5) {
            std::mem::swap(&mut rows, &mut cols);
        }
        // Shrink until the panel fits comfortably.
        while cols > 1 && cols * cell + 1 > mask.width() / 2 {
            cols -= 1;
        }
        while rows > 1 && rows * cell + 1 > mask.height() / 2 {
            rows -= 1;
        }
        let (pw, ph) = (cols * cell + 1, rows * cell + 1);
        for _ in 0..60 {
            if pw + 6 > mask.width() || ph + 6 > mask.height() {
                break;
            }
            let r = Rect {
                x: rng.random_range(3..=mask.width() - pw - 3),
                y: rng.random_range(3..=mask.height() - ph - 3),
                w: pw,
                h: ph,
            };
            let overlaps = placed.iter().any(|(p, _)| {
                r.x < p.x + p.w + 2 && p.x < r.x + r.w + 2 && r.y < p.y + p.h + 2 && p.y < r.y + r.h + 2
            });
            if !overlaps && rect_inside(mask, r, 2) {
                placed.push((r, cell));
                break;
            }
        }
    }
    placed
}

/// Renders rooftop `index` of a city. `with_pv` only decides whether the panel
/// rectangles are painted; their positions are drawn either way.
pub fn render_rooftop(spec: &CitySpec, index: usize, with_pv: bool) -> RenderedRoof {
    let base_seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut panel_rng = ChaCha8Rng::seed_from_u64(base_seed);
    panel_rng.set_stream(1);

    let w = range_u(&mut rng, spec.roof_size_range);
    let h = range_u(&mut rng, spec.roof_size_range);
    let (mask, outline) = footprint(&mut rng, w, h);

    // Ground.
    let ground_noise = value_noise(&mut rng, w, h, 6.0);
    let ground = hsv_to_rgb(range_f(&mut rng, (70.0, 110.0)), 0.25, 0.45);
    // Roof body.
    let hue = range_f(&mut rng, spec.roof_hue_range);
    let sat = range_f(&mut rng, spec.roof_saturation_range);
    let val = range_f(&mut rng, spec.roof_value_range);
    let roof = hsv_to_rgb(hue, sat, val);
    let texture = value_noise(&mut rng, w, h, spec.roof_texture_scale);
    let stripe_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let vertical_stripes = rng.random_bool(0.5);
    let mut canvas = Canvas {
        w,
        h,
        px: vec![[0.0; 3]; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            canvas.px[i] = if mask.get(x, y) {
                let mut t = spec.roof_texture_amplitude * texture[i];
                if let Some(period) = spec.roof_stripe_period {
                    let u = if vertical_stripes { x } else { y } as f64;
                    t += 0.6 * spec.roof_texture_amplitude
                        * (std::f64::consts::TAU * u / period + stripe_phase).sin();
                }
                roof.map(|c| c + t)
            } else {
                ground.map(|c| c + 20.0 * ground_noise[i])
            };
        }
    }
    // Parapet: darker rim just inside the footprint.
    let rim = rng.random_range(1..=3);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let near_edge = x < rim || y < rim || x + rim >= w || y + rim >= h || {
                (y - rim..=y + rim).any(|yy| (x - rim..=x + rim).any(|xx| !mask.get(xx, yy)))
            };
            if near_edge {
                let p = &mut canvas.px[y * w + x];
                *p = p.map(|c| c * 0.7);
            }
        }
    }
    // Clutter shared by both classes: dark tanks and light plant boxes.
    for _ in 0..range_u(&mut rng, spec.clutter_count_range) {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        if rng.random_bool(0.5) {
            let r = rng.random_range(3.0..8.0);
            let v = rng.random_range(25.0..70.0);
            canvas.fill_disc(cx, cy, r, [v, v, v + 5.0], &mask);
        } else {
            let bw = rng.random_range(5..14);
            let bh = rng.random_range(5..14);
            let v = rng.random_range(170.0..230.0);
            canvas.fill_rect(
                Rect {
                    x: cx as usize,
                    y: cy as usize,
                    w: bw,
                    h: bh,
                },
                [v, v, v],
                Some(&mask),
            );
        }
    }

    let panels = place_panels(&mut panel_rng, spec, &mask);
    let panel_color = hsv_to_rgb(
        range_f(&mut panel_rng, spec.pv_hue_range),
        panel_rng.random_range(0.45..0.75),
        range_f(&mut panel_rng, spec.pv_value_range),
    );
    let line = panel_rng.random_range(0.35..0.55) * 255.0;
    if with_pv {
        for &(p, cell) in &panels {
            for y in p.y..p.y + p.h {
                for x in p.x..p.x + p.w {
                    let on_line = (x - p.x) % cell == 0 || (y - p.y) % cell == 0;
                    canvas.px[y * w + x] = if on_line { [line, line, line + 10.0] } else { panel_color };
                }
            }
        }
    }

    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut image = Image::new(w, h, 3);
    for (i, p) in canvas.px.iter().enumerate() {
        for c in 0..3 {
            let n = if spec.noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            image.data_mut()[i * 3 + c] = (p[c] + n).round().clamp(0.0, 255.0) as u8;
        }
    }
    RenderedRoof {
        image,
        footprint: mask,
        outline,
        panels: panels.into_iter().map(|(r, _)| r).collect(),
    }
}
