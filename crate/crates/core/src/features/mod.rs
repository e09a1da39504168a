//! Local descriptors per grid tile (or per resized rooftop).
//!
//! Three sources are supported: the built-in [`extract_baseline`] colour/texture
//! descriptor, precomputed feature files ([`load_features`]), and an ONNX model
//! run through [`ExternalModel`] (behind the `onnx` feature).

mod baseline;
#[cfg(feature = "onnx")]
mod external;
mod resize;
mod store;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodata::Label;
use crate::image::Image;
use crate::matrix::Matrix;

pub use baseline::{BASELINE_DIM, extract_baseline};
#[cfg(feature = "onnx")]
pub use external::{ExternalModel, extract_external};
pub use resize::resize_bilinear;
pub use store::{FEATURE_FILE_VERSION, FeatureFile, load_features, save_features};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error(transparent)]
    Format(#[from] crate::binfmt::FormatError),
    #[error("feature file: {0}")]
    Invalid(String),
    #[error("model load failed for {path}: {message}")]
    ModelLoad { path: String, message: String },
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("extractor configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Baseline,
    PrecomputedFile,
    ExternalModel,
}

/// How local features are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    /// Side length tiles are resized to before extraction; `None` keeps native size.
    pub input_size: Option<usize>,
    pub model_path: Option<String>,
    /// Per-channel `value = byte · scale + offset` applied before external inference.
    pub scale: [f32; 3],
    pub offset: [f32; 3],
    /// Directory holding precomputed feature files.
    pub features_dir: Option<String>,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::Baseline,
            input_size: None,
            model_path: None,
            scale: [1.0 / 255.0; 3],
            offset: [0.0; 3],
            features_dir: None,
        }
    }
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        match (self.kind, &self.model_path) {
            (ExtractorKind::ExternalModel, None) => {
                Err(FeatureError::Config("external model requires model_path".into()))
            }
            (ExtractorKind::ExternalModel, Some(_)) => Ok(()),
            (_, Some(_)) => Err(FeatureError::Config("model_path is only valid for external models".into())),
            (ExtractorKind::PrecomputedFile, None) if self.features_dir.is_none() => {
                Err(FeatureError::Config("precomputed features require features_dir".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short identifier recorded as codebook / feature-file provenance.
    pub fn id(&self) -> String {
        match self.kind {
            ExtractorKind::Baseline => "baseline".into(),
            ExtractorKind::PrecomputedFile => "precomputed".into(),
            ExtractorKind::ExternalModel => {
                let name = self
                    .model_path
                    .as_deref()
                    .and_then(|p| std::path::Path::new(p).file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                format!("onnx:{name}")
            }
        }
    }
}

/// Variable-count set of `D`-dimensional local vectors for one rooftop.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet {
    pub rooftop_id: String,
    pub city_id: String,
    /// One row per kept tile, in tile order.
    pub vectors: Matrix,
    pub label: Option<Label>,
}

impl LocalFeatureSet {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }
}

/// In-process extractor: built-in descriptor or a loaded ONNX session.
pub enum Extractor {
    Baseline { input_size: Option<usize> },
    #[cfg(feature = "onnx")]
    External(ExternalModel),
}

impl Extractor {
    pub fn from_spec(spec: &ExtractorSpec) -> Result<Self, FeatureError> {
        spec.validate()?;
        match spec.kind {
            ExtractorKind::Baseline => Ok(Extractor::Baseline {
                input_size: spec.input_size,
            }),
            #[cfg(feature = "onnx")]
            ExtractorKind::ExternalModel => Ok(Extractor::External(ExternalModel::load(spec)?)),
            #[cfg(not(feature = "onnx"))]
            ExtractorKind::ExternalModel => Err(FeatureError::Config(
                "built without the `onnx` feature".into(),
            )),
            ExtractorKind::PrecomputedFile => Err(FeatureError::Config(
                "precomputed features are looked up, not extracted".into(),
            )),
        }
    }

    /// One vector per image, in input order.
    pub fn extract(&self, images: &[Image]) -> Result<Vec<Vec<f64>>, FeatureError> {
        match self {
            Extractor::Baseline { input_size } => Ok(images
                .par_iter()
                .map(|img| match input_size {
                    Some(s) if (img.width(), img.height()) != (*s, *s) => {
                        extract_baseline(&resize_bilinear(img, *s, *s))
                    }
                    _ => extract_baseline(img),
                })
                .collect()),
            #[cfg(feature = "onnx")]
            Extractor::External(model) => model.extract(images),
        }
    }
}
