//! Utterance-level emotion vectors.

use std::path::Path;

use super::projection::{apply, orthonormal_projection};
use super::rafe::FeatureFile;
use crate::error::{Error, Result};

pub const EMOTION_DIM: usize = 256;
const PROJECTION_SEED: u64 = 0x0e40_7104;

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionEmbedding {
    pub values: Vec<f64>,
}

impl EmotionEmbedding {
    /// The zero vector, meaning no emotion conditioning.
    pub fn none() -> Self {
        Self {
            values: vec![0.0; EMOTION_DIM],
        }
    }

    /// Keeps 256-dim vectors verbatim; other sizes pass through a fixed
    /// orthonormal projection.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::FeatureFile("emotion vector is empty or non-finite".into()));
        }
        if v.len() == EMOTION_DIM {
            return Ok(Self { values: v.to_vec() });
        }
        let m = orthonormal_projection(EMOTION_DIM, v.len(), PROJECTION_SEED ^ v.len() as u64);
        Ok(Self {
            values: apply(&m, EMOTION_DIM, v),
        })
    }

    pub fn from_feature(file: &FeatureFile) -> Result<Self> {
        if file.frames > 1 {
            return Err(Error::FeatureFile(format!(
                "emotion file must hold one vector, found {} frames",
                file.frames
            )));
        }
        Self::from_vector(&file.values.iter().map(|&v| v as f64).collect::<Vec<_>>())
    }

    /// Loads `path` when given, otherwise the zero vector.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_feature(&FeatureFile::read(p)?),
            None => Ok(Self::none()),
        }
    }
}
