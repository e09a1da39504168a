//! Header-plus-payload container shared by the feature, codebook, and model files.
//!
//! Layout: one line of UTF-8 JSON terminated by `\n`, immediately followed by the
//! binary payload. The payload therefore starts at byte `header_len + 1`, and the
//! header records everything needed to slice it.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad header: {0}")]
    Header(String),
    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("payload is {found} bytes, header implies {expected}")]
    Truncated { found: usize, expected: usize },
}

pub fn write_file<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec(header).map_err(|e| FormatError::Header(e.to_string()))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(payload);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| io_err(path, source))?;
    }
    fs::write(path, bytes).map_err(|source| io_err(path, source))
}

/// Splits a container into its parsed header and raw payload bytes.
pub fn read_file<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<u8>), FormatError> {
    let bytes = fs::read(path).map_err(|source| io_err(path, source))?;
    split(&bytes)
}

pub fn split<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<u8>), FormatError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::Header("no header line".into()))?;
    if bytes.first() != Some(&b'{') {
        return Err(FormatError::Header("header does not start with '{'".into()));
    }
    let header = serde_json::from_slice(&bytes[..nl]).map_err(|e| FormatError::Header(e.to_string()))?;
    Ok((header, bytes[nl + 1..].to_vec()))
}

pub fn f64s_to_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32s_to_le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn le_to_f64s(bytes: &[u8], expected: usize) -> Result<Vec<f64>, FormatError> {
    check_len(bytes.len(), expected * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn le_to_f32s(bytes: &[u8], expected: usize) -> Result<Vec<f32>, FormatError> {
    check_len(bytes.len(), expected * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect())
}

fn check_len(found: usize, expected: usize) -> Result<(), FormatError> {
    if found == expected {
        Ok(())
    } else {
        Err(FormatError::Truncated { found, expected })
    }
}

pub fn check_version(found: u32, expected: u32) -> Result<(), FormatError> {
    if found == expected {
        Ok(())
    } else {
        Err(FormatError::Version { found, expected })
    }
}

fn io_err(path: &Path, source: io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}
