use crate::image::Image;

/// Bilinear resize with half-pixel-centre alignment and edge clamping.
///
/// Output samples are rounded to the nearest integer and clamped to `[0, 255]`.
pub fn resize_bilinear(src: &Image, out_w: usize, out_h: usize) -> Image {
    assert!(src.width() >= 1 && src.height() >= 1 && out_w >= 1 && out_h >= 1);
    if (src.width(), src.height()) == (out_w, out_h) {
        return src.clone();
    }
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|x| taps(x, sx, w)).collect();
    let mut out = Image::new(out_w, out_h, ch);
    for y in 0..out_h {
        let (y0, y1, fy) = taps(y, sy, h);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..ch {
                let p00 = src.get(x0, y0, c) as f64;
                let p10 = src.get(x1, y0, c) as f64;
                let p01 = src.get(x0, y1, c) as f64;
                let p11 = src.get(x1, y1, c) as f64;
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                let v = top + (bot - top) * fy;
                out.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Source indices and fractional weight for output coordinate `i`.
fn taps(i: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_size_is_identity() {
        let img = Image::from_raw(3, 2, 3, (0..18).map(|v| v * 13).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 2), img);
    }

    #[test]
    fn two_by_two_to_one_pixel_is_rounded_mean() {
        let img = Image::from_raw(2, 2, 1, vec![0, 100, 200, 56]).unwrap();
        // centre (0.5, 0.5) weights every source pixel by 1/4: 356 / 4 = 89
        assert_eq!(resize_bilinear(&img, 1, 1).data(), &[89]);
    }

    #[test]
    fn upsampling_interpolates_between_neighbours() {
        let img = Image::from_raw(2, 1, 1, vec![0, 200]).unwrap();
        // output centres at source x = -0.25, 0.25, 0.75, 1.25 (clamped to [0, 1])
        assert_eq!(resize_bilinear(&img, 4, 1).data(), &[0, 50, 150, 200]);
    }

    proptest! {
        #[test]
        fn constants_map_to_constants(v in any::<u8>(), w in 1usize..20, h in 1usize..20, ow in 1usize..40, oh in 1usize..40) {
            let img = Image::filled(w, h, 3, v);
            let out = resize_bilinear(&img, ow, oh);
            prop_assert!(out.data().iter().all(|&p| p == v));
        }

        #[test]
        fn output_stays_within_source_range(data in prop::collection::vec(any::<u8>(), 30), ow in 1usize..20, oh in 1usize..20) {
            let img = Image::from_raw(5, 2, 3, data.clone()).unwrap();
            let (lo, hi) = (*data.iter().min().unwrap(), *data.iter().max().unwrap());
            let out = resize_bilinear(&img, ow, oh);
            prop_assert!(out.data().iter().all(|&p| p >= lo && p <= hi));
        }
    }
}
