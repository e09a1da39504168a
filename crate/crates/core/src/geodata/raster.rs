use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GeoError;
use crate::image::Image;

/// Pixel (col, row) → world (x, y):
/// `x = a·col + b·row + c`, `y = d·col + e·row + f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        e: 1.0,
        f: 0.0,
    };

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn apply(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.a * col + self.b * row + self.c,
            self.d * col + self.e * row + self.f,
        )
    }

    pub fn inverse(&self) -> Option<Affine> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (a, b, d, e) = (self.e / det, -self.b / det, -self.d / det, self.a / det);
        Some(Affine {
            a,
            b,
            c: -(a * self.c + b * self.f),
            d,
            e,
            f: -(d * self.c + e * self.f),
        })
    }

    /// Same linear part, origin moved to pixel (col0, row0).
    pub fn offset(&self, col0: f64, row0: f64) -> Affine {
        let (c, f) = self.apply(col0, row0);
        Affine { c, f, ..*self }
    }

    /// Parses the six-line world-file layout `A, D, B, E, C, F`.
    pub fn from_world_file(text: &str) -> Result<Affine, String> {
        let vals = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != 6 {
            return Err(format!("expected 6 coefficients, found {}", vals.len()));
        }
        Ok(Affine {
            a: vals[0],
            d: vals[1],
            b: vals[2],
            e: vals[3],
            c: vals[4],
            f: vals[5],
        })
    }

    pub fn to_world_file(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}\n{}\n{}\n",
            self.a, self.d, self.b, self.e, self.c, self.f
        )
    }
}

/// 3-channel 8-bit raster with its affine georeference.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    pixels: Image,
    transform: Affine,
    inverse: Affine,
}

impl GeoRaster {
    pub fn new(pixels: Image, transform: Affine) -> Result<Self, GeoError> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(GeoError::UnsupportedRaster("empty raster".into()));
        }
        let pixels = match pixels.channels() {
            3 => pixels,
            1 => pixels.gray_to_rgb(),
            n => return Err(GeoError::UnsupportedRaster(format!("{n} channels"))),
        };
        let inverse = transform.inverse().ok_or(GeoError::NonInvertible)?;
        Ok(Self {
            pixels,
            transform,
            inverse,
        })
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn channels(&self) -> usize {
        self.pixels.channels()
    }

    pub fn pixels(&self) -> &Image {
        &self.pixels
    }

    pub fn transform(&self) -> &Affine {
        &self.transform
    }

    pub fn inverse(&self) -> &Affine {
        &self.inverse
    }
}

/// Sidecar names tried, in order, for `x.png`: `x.pgw`, `x.pngw`, `x.wld`, `x.png.wld`.
pub fn world_file_candidates(path: &Path) -> Vec<PathBuf> {
    let mut out = vec![
        path.with_extension("pgw"),
        path.with_extension("pngw"),
        path.with_extension("wld"),
    ];
    let mut s = path.as_os_str().to_owned();
    s.push(".wld");
    out.push(PathBuf::from(s));
    out
}

/// Loads an 8-bit gray or RGB PNG plus its world-file sidecar. Gray input is
/// replicated to three channels.
pub fn load_raster(path: &Path) -> Result<GeoRaster, GeoError> {
    if !path.exists() {
        return Err(GeoError::io(path, "file not found"));
    }
    let world = world_file_candidates(path)
        .into_iter()
        .find(|p| p.exists())
        .ok_or_else(|| GeoError::MissingGeotransform(path.display().to_string()))?;
    let text = fs::read_to_string(&world).map_err(|e| GeoError::io(&world, e))?;
    let transform = Affine::from_world_file(&text).map_err(|message| GeoError::BadGeotransform {
        path: world.display().to_string(),
        message,
    })?;
    let pixels = Image::load_png(path)
        .map_err(|e| GeoError::io(path, e))?
        .map_err(|color| GeoError::UnsupportedRaster(format!("{color:?}")))?;
    GeoRaster::new(pixels, transform)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let t = Affine {
            a: 0.5,
            b: 0.1,
            c: 1000.0,
            d: -0.05,
            e: -0.5,
            f: 2000.0,
        };
        let inv = t.inverse().unwrap();
        let (x, y) = t.apply(12.25, 7.5);
        let (c, r) = inv.apply(x, y);
        assert!((c - 12.25).abs() < 1e-9 && (r - 7.5).abs() < 1e-9);
    }

    #[test]
    fn singular_transform_rejected() {
        let t = Affine {
            a: 1.0,
            b: 2.0,
            c: 0.0,
            d: 2.0,
            e: 4.0,
            f: 0.0,
        };
        assert!(t.inverse().is_none());
        assert!(matches!(
            GeoRaster::new(Image::new(2, 2, 3), t),
            Err(GeoError::NonInvertible)
        ));
    }

    #[test]
    fn world_file_order() {
        let t = Affine::from_world_file("1\n2\n3\n4\n5\n6\n").unwrap();
        assert_eq!((t.a, t.d, t.b, t.e, t.c, t.f), (1.0, 2.0, 3.0, 4.0, 5.0, 6.0));
        assert_eq!(Affine::from_world_file(&t.to_world_file()).unwrap(), t);
        assert!(Affine::from_world_file("1 2 3").is_err());
        assert!(Affine::from_world_file("1 2 3 4 5 x").is_err());
    }

    #[test]
    fn load_rgb_with_identity_world_file() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("r.png");
        Image::filled(4, 4, 3, 9).save_png(&png).unwrap();
        std::fs::write(png.with_extension("pgw"), Affine::IDENTITY.to_world_file()).unwrap();
        let r = load_raster(&png).unwrap();
        assert_eq!((r.width(), r.height(), r.channels()), (4, 4, 3));
        assert_eq!(*r.transform(), Affine::IDENTITY);
    }

    #[test]
    fn load_without_world_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("r.png");
        Image::filled(4, 4, 3, 9).save_png(&png).unwrap();
        let err = load_raster(&png).unwrap_err();
        assert!(err.to_string().contains("missing geotransform"), "{err}");
    }

    #[test]
    fn grayscale_replicated_to_three_planes() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("g.png");
        Image::from_raw(2, 2, 1, vec![0, 50, 100, 250])
            .unwrap()
            .save_png(&png)
            .unwrap();
        std::fs::write(dir.path().join("g.wld"), Affine::IDENTITY.to_world_file()).unwrap();
        let r = load_raster(&png).unwrap();
        assert_eq!(r.channels(), 3);
        let px = r.pixels().data();
        let planes: Vec<Vec<u8>> = (0..3).map(|c| px.iter().skip(c).step_by(3).copied().collect()).collect();
        assert_eq!(planes[0], vec![0, 50, 100, 250]);
        assert_eq!(planes[0], planes[1]);
        assert_eq!(planes[1], planes[2]);
    }

    #[test]
    fn rgba_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("a.png");
        Image::filled(2, 2, 4, 1).save_png(&png).unwrap();
        std::fs::write(png.with_extension("pgw"), Affine::IDENTITY.to_world_file()).unwrap();
        assert!(matches!(load_raster(&png), Err(GeoError::UnsupportedRaster(_))));
    }
}
