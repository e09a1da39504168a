//! Georeferenced rasters, building footprints, and per-rooftop clipping.
//!
//! World and footprint coordinates are assumed to share one planar CRS; no
//! reprojection happens here.

mod clip;
mod dataset;
mod footprint;
mod raster;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};

pub use clip::{clip_rooftop, point_in_polygon};
pub use dataset::{
    CityDataset, RooftopRecord, Split, ingest, read_city, read_key_csv, stratified_split,
    write_city,
};
pub use footprint::{FootprintEntry, FootprintSet, Ring, load_footprints, parse_footprints};
pub use raster::{Affine, GeoRaster, load_raster, world_file_candidates};

#[derive(Debug, thiserror::Error)]
pub enum GeoError {
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("missing geotransform for {0}")]
    MissingGeotransform(String),
    #[error("unparseable geotransform in {path}: {message}")]
    BadGeotransform { path: String, message: String },
    #[error("geotransform is not invertible")]
    NonInvertible,
    #[error("unsupported raster {0}")]
    UnsupportedRaster(String),
    #[error("invalid GeoJSON: {0}")]
    Json(String),
    #[error("feature {0} has no id")]
    MissingId(usize),
    #[error("duplicate rooftop id {0}")]
    DuplicateId(String),
    #[error("unsupported geometry type {kind} for {id}")]
    UnsupportedGeometry { id: String, kind: String },
    #[error("unclosed ring in {0}")]
    UnclosedRing(String),
    #[error("ring in {0} has fewer than 4 vertices")]
    TooFewVertices(String),
    #[error("self-intersecting ring in {0}")]
    SelfIntersecting(String),
    #[error("rooftop {0} lies outside raster")]
    OutsideRaster(String),
    #[error("rooftop {0} has an empty mask")]
    EmptyMask(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

impl GeoError {
    pub(crate) fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        GeoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Rooftop class. The positive class is `WithPv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "no_pv")]
    NoPv,
    #[serde(rename = "with_pv")]
    WithPv,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::WithPv => "with_pv",
            Label::NoPv => "no_pv",
        }
    }

    /// 1 for `WithPv`, 0 for `NoPv`.
    pub fn as_class(self) -> u8 {
        match self {
            Label::WithPv => 1,
            Label::NoPv => 0,
        }
    }

    pub fn from_class(c: u8) -> Self {
        if c == 1 { Label::WithPv } else { Label::NoPv }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "with_pv" => Ok(Label::WithPv),
            "no_pv" => Ok(Label::NoPv),
            other => Err(GeoError::Dataset(format!("unknown label {other:?}"))),
        }
    }
}

/// Clipped, masked pixel patch for one building.
#[derive(Debug, Clone, PartialEq)]
pub struct RooftopImage {
    pub rooftop_id: String,
    pub city_id: String,
    pub pixels: Image,
    pub valid_mask: Mask,
    pub label: Option<Label>,
    /// Pixel → world transform of the crop (origin at the crop's top-left corner).
    pub transform: Affine,
}

impl RooftopImage {
    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    /// Views the crop as a standalone raster with its own transform.
    pub fn as_raster(&self) -> GeoRaster {
        GeoRaster::new(self.pixels.clone(), self.transform).expect("crop transform is invertible")
    }

    /// Pixels with everything outside the footprint set to zero.
    pub fn masked_pixels(&self) -> Image {
        let mut out = self.pixels.clone();
        for y in 0..out.height() {
            for x in 0..out.width() {
                if !self.valid_mask.get(x, y) {
                    out.pixel_mut(x, y).fill(0);
                }
            }
        }
        out
    }
}
