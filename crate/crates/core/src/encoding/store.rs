//! Quantizer files: one JSON header line, then little-endian `f64` payload.
//!
//! Codebook payload: centroids (`K·D`, row-major) at byte 0.
//! GMM payload: weights at byte 0 (`K`), means at `8·K` (`K·D`), variances at
//! `8·K + 8·K·D` (`K·D`). The header repeats these offsets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Codebook, EncodeError, GmmModel, Provenance};
use crate::binfmt;
use crate::matrix::Matrix;

pub const CODEBOOK_FILE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "D")]
    d: usize,
    seed: u64,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inertia: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    floor: Option<f64>,
    offsets: BTreeMap<String, usize>,
}

pub fn save_codebook(path: &Path, cb: &Codebook) -> Result<(), EncodeError> {
    let header = Header {
        version: CODEBOOK_FILE_VERSION,
        kind: "codebook".into(),
        k: cb.k(),
        d: cb.dim(),
        seed: cb.seed,
        provenance: cb.provenance.clone(),
        inertia: Some(cb.inertia),
        floor: None,
        offsets: BTreeMap::from([("centroids".to_string(), 0)]),
    };
    binfmt::write_file(path, &header, &binfmt::f64s_to_le(cb.centroids.as_slice()))?;
    Ok(())
}

pub fn save_gmm(path: &Path, gmm: &GmmModel) -> Result<(), EncodeError> {
    let (k, d) = (gmm.k(), gmm.dim());
    let header = Header {
        version: CODEBOOK_FILE_VERSION,
        kind: "gmm".into(),
        k,
        d,
        seed: gmm.seed,
        provenance: gmm.provenance.clone(),
        inertia: None,
        floor: Some(gmm.floor),
        offsets: BTreeMap::from([
            ("weights".to_string(), 0),
            ("means".to_string(), 8 * k),
            ("variances".to_string(), 8 * k + 8 * k * d),
        ]),
    };
    let mut values = gmm.weights.clone();
    values.extend_from_slice(gmm.means.as_slice());
    values.extend_from_slice(gmm.variances.as_slice());
    binfmt::write_file(path, &header, &binfmt::f64s_to_le(&values))?;
    Ok(())
}

fn read(path: &Path, kind: &str) -> Result<(Header, Vec<f64>), EncodeError> {
    let (header, payload): (Header, Vec<u8>) = binfmt::read_file(path)?;
    binfmt::check_version(header.version, CODEBOOK_FILE_VERSION)?;
    if header.kind != kind {
        return Err(binfmt::FormatError::Header(format!("expected kind {kind}, found {}", header.kind)).into());
    }
    let n = match kind {
        "gmm" => header.k + 2 * header.k * header.d,
        _ => header.k * header.d,
    };
    let values = binfmt::le_to_f64s(&payload, n)?;
    Ok((header, values))
}

pub fn load_codebook(path: &Path) -> Result<Codebook, EncodeError> {
    let (h, values) = read(path, "codebook")?;
    Ok(Codebook {
        centroids: Matrix::from_vec(h.k, h.d, values).expect("length checked"),
        seed: h.seed,
        inertia: h.inertia.unwrap_or(f64::NAN),
        provenance: h.provenance,
    })
}

pub fn load_gmm(path: &Path) -> Result<GmmModel, EncodeError> {
    let (h, values) = read(path, "gmm")?;
    let (k, d) = (h.k, h.d);
    Ok(GmmModel {
        weights: values[..k].to_vec(),
        means: Matrix::from_vec(k, d, values[k..k + k * d].to_vec()).expect("length checked"),
        variances: Matrix::from_vec(k, d, values[k + k * d..].to_vec()).expect("length checked"),
        floor: h.floor.unwrap_or(0.0),
        seed: h.seed,
        provenance: h.provenance,
    })
}

/// Whatever learned state an encoder needs at predict time.
#[derive(Debug, Clone, PartialEq)]
pub enum Quantizer {
    Codebook(Codebook),
    Gmm(GmmModel),
}

pub fn save_quantizer(path: &Path, q: &Quantizer) -> Result<(), EncodeError> {
    match q {
        Quantizer::Codebook(c) => save_codebook(path, c),
        Quantizer::Gmm(g) => save_gmm(path, g),
    }
}

pub fn load_quantizer(path: &Path) -> Result<Quantizer, EncodeError> {
    let (header, _): (Header, Vec<u8>) = binfmt::read_file(path)?;
    match header.kind.as_str() {
        "codebook" => load_codebook(path).map(Quantizer::Codebook),
        "gmm" => load_gmm(path).map(Quantizer::Gmm),
        other => Err(binfmt::FormatError::Header(format!("unknown quantizer kind {other}")).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codebook_and_gmm_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cb = Codebook {
            centroids: Matrix::from_vec(2, 3, vec![0.1, -2.5, 1e-300, 3.0, f64::MIN_POSITIVE, 7.25]).unwrap(),
            seed: 42,
            inertia: 1.5,
            provenance: Provenance {
                cities: vec!["a".into(), "b".into()],
                extractor: "baseline".into(),
            },
        };
        let p = dir.path().join("cb.bin");
        save_codebook(&p, &cb).unwrap();
        assert_eq!(load_codebook(&p).unwrap(), cb);
        assert_eq!(load_quantizer(&p).unwrap(), Quantizer::Codebook(cb));

        let gmm = GmmModel {
            weights: vec![0.25, 0.75],
            means: Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            variances: Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            floor: 1e-7,
            seed: 9,
            provenance: Provenance::default(),
        };
        let p = dir.path().join("gmm.bin");
        save_gmm(&p, &gmm).unwrap();
        assert_eq!(load_gmm(&p).unwrap(), gmm);
        let bytes = std::fs::read(&p).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        // variances start at 8·K + 8·K·D = 48 bytes into the payload
        let v0 = f64::from_le_bytes(bytes[nl + 1 + 48..nl + 1 + 56].try_into().unwrap());
        assert_eq!(v0, 0.1);
        assert!(load_codebook(&p).is_err());
    }
}
