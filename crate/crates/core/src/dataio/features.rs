//! `MCVF` feature files: magic, u16 version, u32 frame count, u32 width,
//! then `T·d` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MCVF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode_features(frames: usize, dim: usize, values: &[f32]) -> Result<Vec<u8>> {
    if frames == 0 || dim == 0 {
        return Err(Error::Data(format!(
            "feature matrix must be non-empty, got {frames}x{dim}"
        )));
    }
    if values.len() != frames * dim {
        return Err(Error::shape("features", &[frames, dim], &[values.len()]));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let frames32 = u32::try_from(frames).map_err(|_| Error::Data("too many frames".into()))?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::Data("feature width too large".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&frames32.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decode to `(frames, dim, values)`.
pub fn decode_features(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated header: expected {HEADER_LEN} bytes, found {}",
                bytes.len()
            ),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}", &bytes[0..4]),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let frames = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if frames == 0 || dim == 0 {
        return Err(Error::Format {
            offset: 6,
            message: format!("empty feature matrix {frames}x{dim}"),
        });
    }
    let expected = HEADER_LEN + 4 * frames * dim;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected),
            message: format!(
                "expected {expected} bytes for {frames}x{dim} features, found {}",
                bytes.len()
            ),
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((frames, dim, values))
}

/// Write a feature matrix; values are stored as `f32`.
pub fn write_features(path: &Path, x: &Tensor) -> Result<()> {
    let values: Vec<f32> = x.data().iter().map(|&v| v as f32).collect();
    let bytes = encode_features(x.rows(), x.cols(), &values)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let (frames, dim, values) = decode_features(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    Tensor::matrix(frames, dim, values.into_iter().map(f64::from).collect())
}
