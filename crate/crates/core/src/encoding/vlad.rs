use super::{Codebook, EncodeError, EncoderKind, GlobalDescriptor, Normalization, nearest_centroid};
use crate::features::LocalFeatureSet;

/// Per-centroid residual sums `Σ (x − c_k)` over hard assignments, concatenated
/// into a `K·D` vector. No normalisation.
pub fn vlad_raw(codebook: &Codebook, local: &LocalFeatureSet) -> Result<Vec<f64>, EncodeError> {
    let d = codebook.dim();
    if local.dim() != d {
        return Err(EncodeError::DimensionMismatch {
            expected: d,
            found: local.dim(),
        });
    }
    let mut out = vec![0.0; codebook.k() * d];
    for x in local.vectors.iter_rows() {
        let (k, _) = nearest_centroid(x, &codebook.centroids);
        let c = codebook.centroids.row(k);
        for ((o, xi), ci) in out[k * d..(k + 1) * d].iter_mut().zip(x).zip(c) {
            *o += xi - ci;
        }
    }
    Ok(out)
}

/// VLAD descriptor: residual sums followed by the configured normalisation
/// (signed square root, then global L2 by default). An all-zero raw
/// descriptor stays all-zero.
pub fn vlad_encode(
    codebook: &Codebook,
    local: &LocalFeatureSet,
    norm: Normalization,
) -> Result<GlobalDescriptor, EncodeError> {
    let mut values = vlad_raw(codebook, local)?;
    norm.apply(&mut values);
    Ok(GlobalDescriptor {
        values,
        encoder: EncoderKind::Vlad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Provenance;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn codebook(rows: &[&[f64]]) -> Codebook {
        Codebook {
            centroids: Matrix::from_rows(rows[0].len(), rows.iter().copied()).unwrap(),
            seed: 0,
            inertia: 0.0,
            provenance: Provenance::default(),
        }
    }

    fn local(rows: &[&[f64]]) -> LocalFeatureSet {
        LocalFeatureSet {
            rooftop_id: "r".into(),
            city_id: "c".into(),
            vectors: Matrix::from_rows(rows[0].len(), rows.iter().copied()).unwrap(),
            label: None,
        }
    }

    #[test]
    fn vector_on_centroid_gives_zero() {
        let cb = codebook(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let d = vlad_encode(&cb, &local(&[&[1.0, 1.0]]), Normalization::default()).unwrap();
        assert_eq!(d.values, vec![0.0; 4]);
    }

    #[test]
    fn two_centroid_example() {
        let cb = codebook(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let l = local(&[&[0.2, 0.0], &[1.0, 0.8], &[0.0, 0.1]]);
        let raw = vlad_raw(&cb, &l).unwrap();
        let expected = [0.2, 0.1, 0.0, -0.2];
        for (a, b) in raw.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{raw:?}");
        }
        let enc = vlad_encode(&cb, &l, Normalization::default()).unwrap();
        let s: Vec<f64> = expected.iter().map(|v: &f64| v.signum() * v.abs().sqrt()).collect();
        let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in enc.values.iter().zip(&s) {
            assert!((a - b / n).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let cb = codebook(&[&[0.0, 0.0]]);
        assert!(matches!(
            vlad_raw(&cb, &local(&[&[1.0, 2.0, 3.0]])),
            Err(EncodeError::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    proptest! {
        #[test]
        fn shape_norm_and_permutation_invariance(
            k in 1usize..5, d in 2usize..9, n in 1usize..30, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cents = Matrix::from_vec(k, d, (0..k * d).map(|_| rng.random::<f64>()).collect()).unwrap();
            let cb = Codebook { centroids: cents, seed: 0, inertia: 0.0, provenance: Provenance::default() };
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
            let l = local(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let enc = vlad_encode(&cb, &l, Normalization::default()).unwrap();
            prop_assert_eq!(enc.len(), k * d);
            let norm = enc.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12 || norm == 0.0);
            let mut rev = rows.clone();
            rev.reverse();
            let enc2 = vlad_encode(&cb, &local(&rev.iter().map(Vec::as_slice).collect::<Vec<_>>()), Normalization::default()).unwrap();
            for (a, b) in enc.values.iter().zip(&enc2.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
