//! Binary embedding tables: the 8 bytes `GLOVEMB1`, then `count` and `dim`
//! as little-endian u32, then `count * dim` little-endian f32 values.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"GLOVEMB1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum EmbFileError {
    #[error("missing GLOVEMB1 magic bytes")]
    BadMagic,
    #[error("file is {got} bytes; header declares {expected}")]
    Length { expected: usize, got: usize },
    #[error("table has {values} values, not a multiple of dim {dim}")]
    Shape { values: usize, dim: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingTable {
    /// Row-major `values` of `values.len() / dim` rows.
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self, EmbFileError> {
        if dim == 0 || values.len() % dim != 0 || values.len() / dim > u32::MAX as usize {
            return Err(EmbFileError::Shape {
                values: values.len(),
                dim,
            });
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EmbFileError> {
        let dim = rows.first().map_or(0, Vec::len);
        let values: Vec<f32> = rows.iter().flatten().map(|&x| x as f32).collect();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(EmbFileError::Shape {
                values: values.len(),
                dim,
            });
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        self.values.get(i * self.dim..(i + 1) * self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, EmbFileError> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(EmbFileError::BadMagic);
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .unwrap_or(usize::MAX);
        if bytes.len() != expected {
            return Err(EmbFileError::Length {
                expected,
                got: bytes.len(),
            });
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim, values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, EmbFileError> {
        let bytes = fs::read(path).map_err(|source| EmbFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbFileError> {
        fs::write(path, self.to_bytes()).map_err(|source| EmbFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
