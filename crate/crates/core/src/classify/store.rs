//! Model files: one JSON header line, then little-endian `f64` payload.
//!
//! Payload: standardisation means (`M`), scales (`M`), then the family block.
//! LR and SVC store weights followed by the bias. RF stores every node of every
//! tree as 7 values `[is_split, feature, threshold, left, right, count0, count1]`;
//! the header lists the node count of each tree.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierParams, ClassifyError, FeatureMap, Forest, ModelKind, Node, Standardizer, Tree, TrainedModel};
use crate::binfmt::{self, FormatError};

pub const MODEL_FILE_VERSION: u32 = 1;
const NODE_WIDTH: usize = 7;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum MapHeader {
    Identity,
    RandomFourier { seed: u64, gamma: f64, dim: usize, input_dim: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct StandardizationHeader {
    dim: usize,
    mean_offset: usize,
    scale_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    family: super::ModelFamily,
    combo: ClassifierParams,
    seed: u64,
    standardization: StandardizationHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    map: Option<MapHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tree_nodes: Option<Vec<usize>>,
    payload_values: usize,
}

pub fn model_to_bytes(model: &TrainedModel) -> Vec<u8> {
    let m = model.input_dim();
    let mut values = model.standardizer.mean.clone();
    values.extend_from_slice(&model.standardizer.scale);
    let mut map = None;
    let mut weights_len = None;
    let mut tree_nodes = None;
    match &model.kind {
        ModelKind::Lr { weights, bias } => {
            weights_len = Some(weights.len());
            values.extend_from_slice(weights);
            values.push(*bias);
        }
        ModelKind::Svc { map: fm, weights, bias } => {
            map = Some(match *fm {
                FeatureMap::Identity => MapHeader::Identity,
                FeatureMap::RandomFourier { seed, gamma, dim, input_dim } => MapHeader::RandomFourier {
                    seed,
                    gamma,
                    dim,
                    input_dim,
                },
            });
            weights_len = Some(weights.len());
            values.extend_from_slice(weights);
            values.push(*bias);
        }
        ModelKind::Rf(forest) => {
            tree_nodes = Some(forest.trees.iter().map(|t| t.nodes.len()).collect());
            for node in forest.trees.iter().flat_map(|t| &t.nodes) {
                values.extend_from_slice(&match *node {
                    Node::Split { feature, threshold, left, right } => {
                        [1.0, feature as f64, threshold, left as f64, right as f64, 0.0, 0.0]
                    }
                    Node::Leaf { counts } => [0.0, 0.0, 0.0, 0.0, 0.0, counts[0] as f64, counts[1] as f64],
                });
            }
        }
    }
    let header = Header {
        version: MODEL_FILE_VERSION,
        family: model.params.family(),
        combo: model.params,
        seed: model.seed,
        standardization: StandardizationHeader {
            dim: m,
            mean_offset: 0,
            scale_offset: 8 * m,
        },
        map,
        weights: weights_len,
        tree_nodes,
        payload_values: values.len(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serialises");
    bytes.push(b'\n');
    bytes.extend(binfmt::f64s_to_le(&values));
    bytes
}

fn bad(msg: impl Into<String>) -> ClassifyError {
    ClassifyError::Format(FormatError::Header(msg.into()))
}

fn index(v: f64, limit: usize) -> Result<usize, ClassifyError> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < limit {
        Ok(v as usize)
    } else {
        Err(bad(format!("index {v} out of range")))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel, ClassifyError> {
    let (header, payload): (Header, Vec<u8>) = binfmt::split(bytes)?;
    binfmt::check_version(header.version, MODEL_FILE_VERSION)?;
    if header.family != header.combo.family() {
        return Err(bad("family does not match combo"));
    }
    let values = binfmt::le_to_f64s(&payload, header.payload_values)?;
    let m = header.standardization.dim;
    if values.len() < 2 * m {
        return Err(bad("payload shorter than standardisation block"));
    }
    let standardizer = Standardizer {
        mean: values[..m].to_vec(),
        scale: values[m..2 * m].to_vec(),
    };
    let rest = &values[2 * m..];
    let linear = |expected: usize| -> Result<(Vec<f64>, f64), ClassifyError> {
        let w = header.weights.ok_or_else(|| bad("missing weights length"))?;
        if w != expected || rest.len() != w + 1 {
            return Err(bad("weights block has the wrong length"));
        }
        Ok((rest[..w].to_vec(), rest[w]))
    };
    let kind = match header.combo {
        ClassifierParams::Lr { .. } => {
            let (weights, bias) = linear(m)?;
            ModelKind::Lr { weights, bias }
        }
        ClassifierParams::Svc { .. } => {
            let map = match header.map.ok_or_else(|| bad("missing feature map"))? {
                MapHeader::Identity => FeatureMap::Identity,
                MapHeader::RandomFourier { seed, gamma, dim, input_dim } => {
                    if input_dim != m {
                        return Err(bad("feature map input dimension mismatch"));
                    }
                    FeatureMap::RandomFourier { seed, gamma, dim, input_dim }
                }
            };
            let (weights, bias) = linear(map.output_dim(m))?;
            ModelKind::Svc { map, weights, bias }
        }
        ClassifierParams::Rf { .. } => {
            let sizes = header.tree_nodes.ok_or_else(|| bad("missing tree sizes"))?;
            if sizes.iter().sum::<usize>() * NODE_WIDTH != rest.len() || sizes.is_empty() {
                return Err(bad("tree block has the wrong length"));
            }
            let mut chunks = rest.chunks_exact(NODE_WIDTH);
            let mut trees = Vec::with_capacity(sizes.len());
            for &n in &sizes {
                let mut nodes = Vec::with_capacity(n);
                for (i, c) in chunks.by_ref().take(n).enumerate() {
                    nodes.push(if c[0] == 1.0 {
                        let (left, right) = (index(c[3], n)?, index(c[4], n)?);
                        if left <= i || right <= i {
                            return Err(bad("tree children must follow their parent"));
                        }
                        Node::Split {
                            feature: index(c[1], m)?,
                            threshold: c[2],
                            left,
                            right,
                        }
                    } else {
                        Node::Leaf {
                            counts: [c[5] as u32, c[6] as u32],
                        }
                    });
                }
                if nodes.is_empty() {
                    return Err(bad("empty tree"));
                }
                trees.push(Tree { nodes });
            }
            ModelKind::Rf(Forest { trees })
        }
    };
    Ok(TrainedModel {
        params: header.combo,
        seed: header.seed,
        standardizer,
        kind,
    })
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<(), ClassifyError> {
    let bytes = model_to_bytes(model);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| FormatError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ClassifyError> {
    let bytes = std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{Dataset2D, Kernel, LrSolver, fit, predict};
    use crate::matrix::Matrix;

    fn data() -> Dataset2D {
        let x: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 * 0.3 + (i % 2) as f64).collect();
        let y = (0..20).map(|i| (i % 2) as u8).collect();
        Dataset2D::from_xy(Matrix::from_vec(20, 2, x).unwrap(), y).unwrap()
    }

    #[test]
    fn round_trip_every_family() {
        let d = data();
        let combos = [
            ClassifierParams::Lr { c: 1.0, solver: LrSolver::Lbfgs },
            ClassifierParams::Rf { n_estimators: 5, max_depth: Some(3) },
            ClassifierParams::Svc { c: 1.0, kernel: Kernel::Linear },
            ClassifierParams::Svc { c: 1.0, kernel: Kernel::Rbf },
        ];
        let dir = tempfile::tempdir().unwrap();
        for (i, combo) in combos.iter().enumerate() {
            let model = fit(&d, combo, 9).unwrap();
            let path = dir.path().join(format!("m{i}/model.bin"));
            save_model(&path, &model).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, model);
            assert_eq!(predict(&back, &d.x).unwrap(), predict(&model, &d.x).unwrap());
        }
    }

    #[test]
    fn rejects_corruption() {
        let model = fit(&data(), &ClassifierParams::Lr { c: 1.0, solver: LrSolver::Liblinear }, 0).unwrap();
        let bytes = model_to_bytes(&model);
        assert!(model_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let text = String::from_utf8_lossy(&bytes).replacen("\"version\":1", "\"version\":9", 1);
        let mut altered = text.split('\n').next().unwrap().as_bytes().to_vec();
        altered.push(b'\n');
        altered.extend_from_slice(&bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..]);
        assert!(matches!(
            model_from_bytes(&altered),
            Err(ClassifyError::Format(FormatError::Version { found: 9, .. }))
        ));
        assert!(model_from_bytes(b"garbage\n").is_err());
    }
}
