//! `RAFE` feature files for externally computed content and emotion data.
//!
//! Layout (little-endian): magic `RAFE`, u32 version 1, u32 frame count `T`
//! (0 for a single utterance-level vector), u32 dim `D`, then `T x D` (or
//! `D`) f32 values row-major.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RAFE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    /// 0 for an utterance-level vector.
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureFile {
    pub fn rows(&self) -> usize {
        self.frames.max(1)
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::FeatureFile(m.to_string());
        if buf.len() < 16 || &buf[..4] != MAGIC {
            return Err(bad("missing RAFE header"));
        }
        let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
        if word(4) != VERSION {
            return Err(Error::FeatureFile(format!("unsupported RAFE version {}", word(4))));
        }
        let frames = word(8) as usize;
        let dim = word(12) as usize;
        if dim == 0 {
            return Err(bad("feature dim is zero"));
        }
        let n = frames
            .max(1)
            .checked_mul(dim)
            .ok_or_else(|| bad("feature size overflows"))?;
        if buf.len() - 16 != n * 4 {
            return Err(Error::FeatureFile(format!(
                "expected {} value bytes, found {}",
                n * 4,
                buf.len() - 16
            )));
        }
        let values: Vec<f32> = buf[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite feature value"));
        }
        Ok(Self { frames, dim, values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::FeatureFile(format!("{}: {e}", path.display())))?;
        Self::decode(&buf).map_err(|e| match e {
            Error::FeatureFile(m) => Error::FeatureFile(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_and_matrix_sizes() {
        let v = FeatureFile {
            frames: 0,
            dim: 3,
            values: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(v.encode().len(), 16 + 12);
        assert_eq!(FeatureFile::decode(&v.encode()).unwrap(), v);
        let m = FeatureFile {
            frames: 2,
            dim: 2,
            values: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(FeatureFile::decode(&m.encode()).unwrap().row(1), &[3.0, 4.0]);
    }

    #[test]
    fn malformed_files_are_feature_file_errors() {
        let mut bytes = FeatureFile {
            frames: 2,
            dim: 2,
            values: vec![0.0; 4],
        }
        .encode();
        bytes.pop();
        assert!(matches!(FeatureFile::decode(&bytes), Err(Error::FeatureFile(_))));
        assert!(matches!(FeatureFile::decode(b"RAFX0000"), Err(Error::FeatureFile(_))));
    }
}
