use super::{EncodeError, EncoderKind, GlobalDescriptor, GmmModel, Normalization};
use crate::features::LocalFeatureSet;

/// Unnormalised Fisher vector: `K` mean-gradient blocks followed by `K`
/// standard-deviation-gradient blocks, each of length `D`.
///
/// ```text
/// G_μk = 1/(n·√w_k)    Σ γ_k(x) (x − μ_k) / σ_k
/// G_σk = 1/(n·√(2w_k)) Σ γ_k(x) ((x − μ_k)² / σ_k² − 1)
/// ```
pub fn fv_raw(gmm: &GmmModel, local: &LocalFeatureSet) -> Result<Vec<f64>, EncodeError> {
    let (k, d) = (gmm.k(), gmm.dim());
    if local.dim() != d {
        return Err(EncodeError::DimensionMismatch {
            expected: d,
            found: local.dim(),
        });
    }
    if local.is_empty() {
        return Err(EncodeError::Empty(local.rooftop_id.clone()));
    }
    let mut out = vec![0.0; 2 * k * d];
    let (mu_part, sigma_part) = out.split_at_mut(k * d);
    let mut gamma = vec![0.0; k];
    let sigmas: Vec<f64> = gmm.variances.as_slice().iter().map(|v| v.sqrt()).collect();
    for x in local.vectors.iter_rows() {
        gmm.responsibilities(x, &mut gamma);
        for (c, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let mean = gmm.means.row(c);
            for j in 0..d {
                let z = (x[j] - mean[j]) / sigmas[c * d + j];
                mu_part[c * d + j] += g * z;
                sigma_part[c * d + j] += g * (z * z - 1.0);
            }
        }
    }
    let n = local.len() as f64;
    for c in 0..k {
        let w = gmm.weights[c];
        let (sm, ss) = if w > 0.0 {
            (1.0 / (n * w.sqrt()), 1.0 / (n * (2.0 * w).sqrt()))
        } else {
            (0.0, 0.0)
        };
        mu_part[c * d..(c + 1) * d].iter_mut().for_each(|v| *v *= sm);
        sigma_part[c * d..(c + 1) * d].iter_mut().for_each(|v| *v *= ss);
    }
    Ok(out)
}

pub fn fv_encode(
    gmm: &GmmModel,
    local: &LocalFeatureSet,
    norm: Normalization,
) -> Result<GlobalDescriptor, EncodeError> {
    let mut values = fv_raw(gmm, local)?;
    norm.apply(&mut values);
    Ok(GlobalDescriptor {
        values,
        encoder: EncoderKind::Fv,
    })
}
