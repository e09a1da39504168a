//! Built-in 22-dimensional colour/texture descriptor.
//!
//! Layout (pixels scaled to `[0, 1]`):
//!
//! | slots  | content                                                   |
//! |--------|-----------------------------------------------------------|
//! | 0..3   | per-channel mean                                          |
//! | 3..6   | per-channel population standard deviation                 |
//! | 6..14  | luminance gradient orientations over `[0, π)`, magnitude-weighted, L1-normalised |
//! | 14..22 | luminance intensity histogram, 8 equal bins, L1-normalised |

use std::f64::consts::FRAC_PI_8;

use crate::image::Image;

pub const BASELINE_DIM: usize = 22;
const ORIENT_BINS: usize = 8;
const INTENSITY_BINS: usize = 8;

fn luminance(px: &[u8]) -> f64 {
    (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0
}

/// Orientation bin of a non-zero gradient, computed so that a quarter turn of
/// the gradient maps bin `k` to `(k + 4) mod 8` exactly.
pub(crate) fn orientation_bin(gx: f64, gy: f64) -> usize {
    // fold onto the upper half-plane: angles live in [0, π)
    let (gx, gy) = if gy < 0.0 || (gy == 0.0 && gx < 0.0) {
        (-gx, -gy)
    } else {
        (gx, gy)
    };
    let quarter = |t: f64| ((t / FRAC_PI_8).floor() as usize).min(3);
    if gx > 0.0 {
        quarter(gy.atan2(gx))
    } else {
        4 + quarter((-gx).atan2(gy))
    }
}

pub fn extract_baseline(tile: &Image) -> Vec<f64> {
    assert_eq!(tile.channels(), 3, "baseline descriptor expects RGB input");
    let (w, h) = (tile.width(), tile.height());
    let n = (w * h) as f64;
    let mut out = vec![0.0; BASELINE_DIM];

    // integer sums keep the mean of a constant tile exact
    let mut sum = [0u64; 3];
    for px in tile.data().chunks_exact(3) {
        for c in 0..3 {
            sum[c] += px[c] as u64;
        }
    }
    let mean = sum.map(|s| s as f64 / (255.0 * n));
    let mut var = [0.0f64; 3];
    for px in tile.data().chunks_exact(3) {
        for c in 0..3 {
            let d = px[c] as f64 / 255.0 - mean[c];
            var[c] += d * d;
        }
    }
    out[..3].copy_from_slice(&mean);
    for c in 0..3 {
        out[3 + c] = (var[c] / n).sqrt();
    }

    let lum: Vec<f64> = tile.data().chunks_exact(3).map(luminance).collect();
    let at = |x: usize, y: usize| lum[y * w + x];

    let mut orient = [0.0f64; ORIENT_BINS];
    for y in 0..h {
        for x in 0..w {
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                orient[orientation_bin(gx, gy)] += mag;
            }
        }
    }
    let total: f64 = orient.iter().sum();
    if total > 0.0 {
        for (o, v) in out[6..14].iter_mut().zip(orient) {
            *o = v / total;
        }
    }

    let mut intensity = [0.0f64; INTENSITY_BINS];
    for &l in &lum {
        let bin = ((l * INTENSITY_BINS as f64).floor() as usize).min(INTENSITY_BINS - 1);
        intensity[bin] += 1.0;
    }
    for (o, v) in out[14..22].iter_mut().zip(intensity) {
        *o = v / n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_tile() {
        let f = extract_baseline(&Image::filled(16, 16, 3, 102));
        assert_eq!(f.len(), BASELINE_DIM);
        for c in 0..3 {
            assert!((f[c] - 0.4).abs() < 1e-12);
            assert_eq!(f[3 + c], 0.0);
        }
        assert!(f[6..14].iter().all(|&v| v == 0.0));
        let mut onehot = [0.0; 8];
        onehot[3] = 1.0;
        assert_eq!(&f[14..22], &onehot);
    }

    /// Direct re-computation of the orientation histogram with `atan2` on the
    /// full angle, for gradients that avoid bin boundaries.
    fn orientation_oracle(img: &Image) -> [f64; 8] {
        let (w, h) = (img.width(), img.height());
        let l = |x: usize, y: usize| luminance(img.pixel(x, y));
        let mut hist = [0.0; 8];
        for y in 0..h {
            for x in 0..w {
                let gx = (l((x + 1).min(w - 1), y) - l(x.saturating_sub(1), y)) / 2.0;
                let gy = (l(x, (y + 1).min(h - 1)) - l(x, y.saturating_sub(1))) / 2.0;
                let m = gx.hypot(gy);
                if m == 0.0 {
                    continue;
                }
                let mut t = gy.atan2(gx);
                if t < 0.0 {
                    t += std::f64::consts::PI;
                }
                if t >= std::f64::consts::PI {
                    t -= std::f64::consts::PI;
                }
                hist[((t / FRAC_PI_8).floor() as usize).min(7)] += m;
            }
        }
        let s: f64 = hist.iter().sum();
        hist.map(|v| v / s)
    }

    #[test]
    fn vertical_step_edge_is_horizontal_gradient() {
        let mut img = Image::new(16, 16, 3);
        for y in 0..16 {
            for x in 8..16 {
                img.pixel_mut(x, y).fill(255);
            }
        }
        let f = extract_baseline(&img);
        assert!(f[3..6].iter().all(|&s| s > 0.0));
        assert_eq!(f[6], 1.0);
        assert_eq!(&f[6..14], &orientation_oracle(&img));
    }

    #[test]
    fn identical_tiles_identical_vectors() {
        let img = Image::from_raw(8, 8, 3, (0..192).map(|v| (v * 31 % 256) as u8).collect()).unwrap();
        assert_eq!(extract_baseline(&img), extract_baseline(&img.clone()));
    }

    #[test]
    fn quarter_turn_bin_mapping() {
        for &(gx, gy) in &[(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (1.0, 1.0), (-0.3, 0.7), (0.2, -0.9), (-1.0, -1.0)] {
            let k = orientation_bin(gx, gy);
            assert_eq!(orientation_bin(-gy, gx), (k + 4) % 8, "({gx},{gy})");
        }
    }

    proptest! {
        #[test]
        fn histograms_normalised_and_flip_invariant(data in prop::collection::vec(any::<u8>(), 12 * 12 * 3)) {
            let img = Image::from_raw(12, 12, 3, data).unwrap();
            let f = extract_baseline(&img);
            prop_assert!(f.iter().all(|v| v.is_finite()));
            let osum: f64 = f[6..14].iter().sum();
            prop_assert!((osum - 1.0).abs() < 1e-12 || osum == 0.0);
            prop_assert!((f[14..22].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let g = extract_baseline(&img.hflip());
            for i in 0..6 {
                prop_assert!((f[i] - g[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn rotation_shifts_orientation_bins_by_four(data in prop::collection::vec(any::<u8>(), 10 * 7 * 3)) {
            let img = Image::from_raw(10, 7, 3, data).unwrap();
            let f = extract_baseline(&img);
            let r = extract_baseline(&img.rotate90());
            for k in 0..8 {
                prop_assert!((f[6 + k] - r[6 + (k + 4) % 8]).abs() < 1e-12, "bin {}", k);
            }
        }
    }
}
