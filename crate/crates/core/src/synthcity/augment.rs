//! Photometric and geometric augmentations applied jointly to pixels and mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::resize_bilinear;
use crate::geodata::RooftopImage;
use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugKind {
    HFlip,
    VFlip,
    /// Keeps a window of `keep` times the original area, then resizes back.
    RandomCrop { keep: f64 },
    GammaContrast { gamma: f64 },
    GaussianBlur { sigma: f64 },
    /// Additive offset in 8-bit units.
    Brightness { delta: f64 },
    Rotate { degrees: f64 },
    Shear { degrees: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationOp {
    pub kind: AugKind,
    /// Drives the crop window position; other kinds ignore it.
    pub seed: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid augmentation parameter: {0}")]
pub struct AugmentError(pub String);

impl AugmentationOp {
    pub fn new(kind: AugKind, seed: u64) -> Result<Self, AugmentError> {
        let op = Self { kind, seed };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError(m));
        match self.kind {
            AugKind::RandomCrop { keep } if !(0.7..=1.0).contains(&keep) => bad(format!("crop keep {keep} outside [0.7, 1]")),
            AugKind::GammaContrast { gamma } if !(gamma > 0.0 && gamma.is_finite()) => bad(format!("gamma {gamma} must be positive")),
            AugKind::GaussianBlur { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => bad(format!("blur sigma {sigma} must be ≥ 0")),
            AugKind::Brightness { delta } if !delta.is_finite() => bad("brightness delta must be finite".into()),
            AugKind::Rotate { degrees } if !(degrees.abs() <= 45.0) => bad(format!("rotation {degrees}° exceeds 45°")),
            AugKind::Shear { degrees } if !(degrees.abs() <= 20.0) => bad(format!("shear {degrees}° exceeds 20°")),
            _ => Ok(()),
        }
    }
}

/// One to three ops drawn uniformly from all kinds, with parameters inside the
/// valid ranges.
pub fn sample_chain(rng: &mut ChaCha8Rng) -> Vec<AugmentationOp> {
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| {
            let kind = match rng.random_range(0..8) {
                0 => AugKind::HFlip,
                1 => AugKind::VFlip,
                2 => AugKind::RandomCrop {
                    keep: rng.random_range(0.7..=1.0),
                },
                3 => AugKind::GammaContrast {
                    gamma: rng.random_range(0.7..1.4),
                },
                4 => AugKind::GaussianBlur {
                    sigma: rng.random_range(0.0..1.5),
                },
                5 => AugKind::Brightness {
                    delta: rng.random_range(-30.0..30.0),
                },
                6 => AugKind::Rotate {
                    degrees: rng.random_range(-45.0..45.0),
                },
                _ => AugKind::Shear {
                    degrees: rng.random_range(-20.0..20.0),
                },
            };
            AugmentationOp { kind, seed: rng.random() }
        })
        .collect()
}

/// Normalised Gaussian weights on `[-r, r]`, `r = ⌈3σ⌉`. `σ = 0` gives `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable blur of one plane with edge replication.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * plane[y * width + clamp(x as i64 + i as i64 - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * tmp[clamp(y as i64 + i as i64 - r, height) * width + x])
                .sum();
        }
    }
    out
}

fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_bytes(img: &Image, f: impl Fn(u8) -> u8) -> Image {
    let mut out = img.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

fn blur(img: &Image, sigma: f64) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    for ch in 0..c {
        let plane: Vec<f64> = (0..w * h).map(|i| img.data()[i * c + ch] as f64).collect();
        for (i, v) in blur_plane(&plane, w, h, sigma).into_iter().enumerate() {
            out.data_mut()[i * c + ch] = to_byte(v);
        }
    }
    out
}

fn sample_bilinear(img: &Image, sx: f64, sy: f64, out: &mut [u8]) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x = sx.clamp(0.0, w - 1.0);
    let y = sy.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    for (c, o) in out.iter_mut().enumerate() {
        let v = (1.0 - fy) * ((1.0 - fx) * img.get(x0, y0, c) as f64 + fx * img.get(x1, y0, c) as f64)
            + fy * ((1.0 - fx) * img.get(x0, y1, c) as f64 + fx * img.get(x1, y1, c) as f64);
        *o = to_byte(v);
    }
}

/// Inverse-maps every output pixel centre through `src_of`. Pixels use bilinear
/// sampling with edge padding; the mask uses nearest neighbour and is false
/// outside the source.
fn warp(img: &Image, mask: &Mask, src_of: impl Fn(f64, f64) -> (f64, f64)) -> (Image, Mask) {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::new(w, h, img.channels());
    let mut m = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src_of(x as f64 + 0.5, y as f64 + 0.5);
            sample_bilinear(img, sx - 0.5, sy - 0.5, out.pixel_mut(x, y));
            let (nx, ny) = (sx.floor(), sy.floor());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                m.set(x, y, mask.get(nx as usize, ny as usize));
            }
        }
    }
    (out, m)
}

fn resize_mask(mask: &Mask, w: usize, h: usize) -> Mask {
    let mut out = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let sx = ((x as f64 + 0.5) * mask.width() as f64 / w as f64) as usize;
            let sy = ((y as f64 + 0.5) * mask.height() as f64 / h as f64) as usize;
            out.set(x, y, mask.get(sx.min(mask.width() - 1), sy.min(mask.height() - 1)));
        }
    }
    out
}

fn mask_hflip(m: &Mask) -> Mask {
    let mut out = Mask::new(m.width(), m.height());
    for y in 0..m.height() {
        for x in 0..m.width() {
            out.set(m.width() - 1 - x, y, m.get(x, y));
        }
    }
    out
}

fn mask_vflip(m: &Mask) -> Mask {
    let mut out = Mask::new(m.width(), m.height());
    for y in 0..m.height() {
        for x in 0..m.width() {
            out.set(x, m.height() - 1 - y, m.get(x, y));
        }
    }
    out
}

/// Applies `op` to an image and its validity mask. If a geometric op would
/// leave the mask empty, the inputs are returned unchanged.
pub fn augment_with_mask(img: &Image, mask: &Mask, op: &AugmentationOp) -> (Image, Mask) {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let result = match op.kind {
        AugKind::HFlip => (img.hflip(), mask_hflip(mask)),
        AugKind::VFlip => (img.vflip(), mask_vflip(mask)),
        AugKind::RandomCrop { keep } => {
            let s = keep.sqrt();
            let cw = ((s * w as f64).round() as usize).clamp(1, w);
            let ch = ((s * h as f64).round() as usize).clamp(1, h);
            let mut rng = ChaCha8Rng::seed_from_u64(op.seed);
            let x0 = rng.random_range(0..=w - cw);
            let y0 = rng.random_range(0..=h - ch);
            (
                resize_bilinear(&img.crop(x0, y0, cw, ch), w, h),
                resize_mask(&mask.crop(x0, y0, cw, ch), w, h),
            )
        }
        AugKind::GammaContrast { gamma } => (
            map_bytes(img, |v| to_byte(255.0 * (v as f64 / 255.0).powf(gamma))),
            mask.clone(),
        ),
        AugKind::GaussianBlur { sigma } => (blur(img, sigma), mask.clone()),
        AugKind::Brightness { delta } => (map_bytes(img, |v| to_byte(v as f64 + delta)), mask.clone()),
        AugKind::Rotate { degrees } => {
            if degrees == 0.0 {
                (img.clone(), mask.clone())
            } else {
                let (s, c) = degrees.to_radians().sin_cos();
                warp(img, mask, |x, y| {
                    let (dx, dy) = (x - cx, y - cy);
                    (c * dx + s * dy + cx, -s * dx + c * dy + cy)
                })
            }
        }
        AugKind::Shear { degrees } => {
            if degrees == 0.0 {
                (img.clone(), mask.clone())
            } else {
                let t = degrees.to_radians().tan();
                warp(img, mask, |x, y| (x - t * (y - cy), y))
            }
        }
    };
    if result.1.count() == 0 {
        (img.clone(), mask.clone())
    } else {
        result
    }
}

pub fn augment(img: &Image, op: &AugmentationOp) -> Image {
    augment_with_mask(img, &Mask::full(img.width(), img.height()), op).0
}

pub fn augment_rooftop(rooftop: &RooftopImage, ops: &[AugmentationOp]) -> RooftopImage {
    let mut pixels = rooftop.pixels.clone();
    let mut mask = rooftop.valid_mask.clone();
    for op in ops {
        (pixels, mask) = augment_with_mask(&pixels, &mask, op);
    }
    RooftopImage {
        pixels,
        valid_mask: mask,
        ..rooftop.clone()
    }
}
