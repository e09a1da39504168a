//! ONNX inference adapter.
//!
//! The model takes one `1 × 3 × S × S` float tensor (NCHW) and returns one
//! tensor. A rank-2 output `1 × C` is used as is; higher-rank outputs
//! `1 × C × …` are global-average-pooled over the trailing spatial axes.
//!
//! One optimised plan is shared read-only; calls run inference sequentially.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use tract_onnx::prelude::*;

use super::{ExtractorSpec, FeatureError, resize_bilinear};
use crate::image::Image;

const DEFAULT_INPUT_SIZE: usize = 224;

pub struct ExternalModel {
    plan: Arc<TypedRunnableModel>,
    input_size: usize,
    scale: [f32; 3],
    offset: [f32; 3],
    dim: OnceLock<usize>,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("input_size", &self.input_size)
            .field("dim", &self.dim.get())
            .finish()
    }
}

impl ExternalModel {
    pub fn load(spec: &ExtractorSpec) -> Result<Self, FeatureError> {
        let path = spec
            .model_path
            .as_deref()
            .ok_or_else(|| FeatureError::Config("external model requires model_path".into()))?;
        let size = spec.input_size.unwrap_or(DEFAULT_INPUT_SIZE);
        let load_err = |e: TractError| FeatureError::ModelLoad {
            path: path.to_string(),
            message: format!("{e:#}"),
        };
        if !Path::new(path).exists() {
            return Err(FeatureError::ModelLoad {
                path: path.to_string(),
                message: "file not found".into(),
            });
        }
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| {
                m.with_input_fact(
                    0,
                    InferenceFact::dt_shape(f32::datum_type(), tvec!(1, 3, size, size)),
                )
            })
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(load_err)?;
        Ok(Self {
            plan,
            input_size: size,
            scale: spec.scale,
            offset: spec.offset,
            dim: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    fn to_tensor(&self, img: &Image) -> Tensor {
        let s = self.input_size;
        let img = if (img.width(), img.height()) == (s, s) {
            img.clone()
        } else {
            resize_bilinear(img, s, s)
        };
        tract_ndarray::Array4::<f32>::from_shape_fn((1, 3, s, s), |(_, c, y, x)| {
            img.get(x, y, c) as f32 * self.scale[c] + self.offset[c]
        })
        .into()
    }

    fn infer(&self, img: &Image) -> Result<Vec<f64>, FeatureError> {
        let out = self
            .plan
            .run(tvec!(self.to_tensor(img).into()))
            .map_err(|e| FeatureError::Inference(format!("{e:#}")))?;
        let view = out[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| FeatureError::Inference(format!("{e:#}")))?;
        let shape = view.shape().to_vec();
        let v: Vec<f64> = if shape.len() >= 3 {
            let c = shape[1];
            let spatial: usize = shape[2..].iter().product();
            let flat: Vec<f32> = view.iter().copied().collect();
            (0..c)
                .map(|ch| {
                    let block = &flat[ch * spatial..(ch + 1) * spatial];
                    block.iter().map(|&x| x as f64).sum::<f64>() / spatial as f64
                })
                .collect()
        } else {
            view.iter().map(|&x| x as f64).collect()
        };
        let expected = *self.dim.get_or_init(|| v.len());
        if v.len() != expected {
            return Err(FeatureError::DimensionMismatch {
                expected,
                found: v.len(),
            });
        }
        Ok(v)
    }

    pub fn extract(&self, images: &[Image]) -> Result<Vec<Vec<f64>>, FeatureError> {
        images.iter().map(|img| self.infer(img)).collect()
    }
}

/// Loads the model described by `spec` and runs it over `images`.
pub fn extract_external(images: &[Image], spec: &ExtractorSpec) -> Result<Vec<Vec<f64>>, FeatureError> {
    if spec.kind != super::ExtractorKind::ExternalModel {
        return Err(FeatureError::Config("spec is not an external model".into()));
    }
    ExternalModel::load(spec)?.extract(images)
}
