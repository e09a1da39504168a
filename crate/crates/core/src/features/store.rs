//! Feature file: one JSON header line, then `Σ count_i · dim` little-endian
//! `f32` values in rooftop order (tile order within a rooftop).
//!
//! ```text
//! {"version":1,"city":"rcp","extractor":"baseline","dim":22,"rooftops":[{"id":"b1","label":"with_pv","count":3},...]}\n
//! <payload>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureError, LocalFeatureSet};
use crate::binfmt;
use crate::geodata::Label;
use crate::matrix::Matrix;

pub const FEATURE_FILE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    city: String,
    extractor: String,
    dim: usize,
    rooftops: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    id: String,
    label: Option<Label>,
    count: usize,
}

/// Parsed feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub city: String,
    pub extractor: String,
    pub dim: usize,
    pub sets: Vec<LocalFeatureSet>,
}

pub fn save_features(
    path: &Path,
    city: &str,
    extractor: &str,
    sets: &[LocalFeatureSet],
) -> Result<(), FeatureError> {
    let dim = sets.first().map_or(0, LocalFeatureSet::dim);
    let mut payload = Vec::new();
    let mut rooftops = Vec::with_capacity(sets.len());
    for s in sets {
        if s.dim() != dim {
            return Err(FeatureError::DimensionMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        let as_f32: Vec<f32> = s.vectors.as_slice().iter().map(|&v| v as f32).collect();
        payload.extend(binfmt::f32s_to_le(&as_f32));
        rooftops.push(Entry {
            id: s.rooftop_id.clone(),
            label: s.label,
            count: s.len(),
        });
    }
    let header = Header {
        version: FEATURE_FILE_VERSION,
        city: city.to_string(),
        extractor: extractor.to_string(),
        dim,
        rooftops,
    };
    binfmt::write_file(path, &header, &payload)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureFile, FeatureError> {
    let (header, payload): (Header, Vec<u8>) = binfmt::read_file(path)?;
    binfmt::check_version(header.version, FEATURE_FILE_VERSION)?;
    let total: usize = header.rooftops.iter().map(|r| r.count).sum();
    let values = binfmt::le_to_f32s(&payload, total * header.dim)?;
    let mut offset = 0;
    let mut sets = Vec::with_capacity(header.rooftops.len());
    for r in header.rooftops {
        let n = r.count * header.dim;
        let data = values[offset..offset + n].iter().map(|&v| v as f64).collect();
        offset += n;
        sets.push(LocalFeatureSet {
            rooftop_id: r.id,
            city_id: header.city.clone(),
            vectors: Matrix::from_vec(r.count, header.dim, data)
                .ok_or_else(|| FeatureError::Invalid("index inconsistent with payload".into()))?,
            label: r.label,
        });
    }
    Ok(FeatureFile {
        city: header.city,
        extractor: header.extractor,
        dim: header.dim,
        sets,
    })
}
