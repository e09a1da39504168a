//! Fixed-length rooftop descriptors from variable-count local features.

mod fisher;
mod gmm;
mod kmeans;
mod store;
mod vlad;

use serde::{Deserialize, Serialize};

use crate::features::LocalFeatureSet;
use crate::matrix::Matrix;

pub use fisher::{fv_encode, fv_raw};
pub use gmm::{GmmFit, GmmModel, GmmParams, gmm_fit, log_likelihood};
pub use kmeans::{Codebook, KMeansFit, KMeansParams, kmeans_fit, nearest_centroid};
pub use store::{
    CODEBOOK_FILE_VERSION, Quantizer, load_codebook, load_gmm, load_quantizer, save_codebook,
    save_gmm, save_quantizer,
};
pub use vlad::{vlad_encode, vlad_raw};

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("need at least K = {k} vectors, got {n}")]
    TooFewVectors { n: usize, k: usize },
    #[error("K must be at least 1")]
    ZeroClusters,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty local feature set for {0}")]
    Empty(String),
    #[error("mixture did not converge: {0}")]
    NonConvergence(String),
    #[error(transparent)]
    Format(#[from] crate::binfmt::FormatError),
}

/// Which aggregator produced a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Vlad,
    Fv,
    Avg,
    Br,
}

/// Post-processing applied to VLAD and Fisher vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub signed_sqrt: bool,
    pub l2: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            signed_sqrt: true,
            l2: true,
        }
    }
}

impl Normalization {
    pub fn apply(&self, v: &mut [f64]) {
        if self.signed_sqrt {
            for x in v.iter_mut() {
                *x = x.signum() * x.abs().sqrt();
            }
        }
        if self.l2 {
            let n = crate::matrix::l2_norm(v);
            if n > 0.0 {
                for x in v.iter_mut() {
                    *x /= n;
                }
            }
        }
    }
}

/// Where a quantizer's training data came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub cities: Vec<String>,
    pub extractor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalDescriptor {
    pub values: Vec<f64>,
    pub encoder: EncoderKind,
}

impl GlobalDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Element-wise mean of the local vectors, without normalisation.
pub fn avg_encode(local: &LocalFeatureSet) -> Result<GlobalDescriptor, EncodeError> {
    if local.is_empty() {
        return Err(EncodeError::Empty(local.rooftop_id.clone()));
    }
    let mut values = vec![0.0; local.dim()];
    for row in local.vectors.iter_rows() {
        for (acc, v) in values.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let n = local.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(GlobalDescriptor {
        values,
        encoder: EncoderKind::Avg,
    })
}

/// Seeded uniform subsample of at most `cap` rows (order preserved).
pub fn subsample_rows(pool: &Matrix, cap: usize, seed: u64) -> Matrix {
    use rand::SeedableRng;
    if pool.rows() <= cap {
        return pool.clone();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pool.rows(), cap).into_vec();
    idx.sort_unstable();
    pool.select_rows(&idx)
}

/// Rows per work unit for parallel reductions. Partial results are always
/// combined in chunk order, so outputs do not depend on the worker count.
pub(crate) const REDUCE_CHUNK: usize = 512;
