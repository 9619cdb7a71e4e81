//! Frame-aligned 1024-dim content features.
//!
//! Two providers: `file` loads an external dump and aligns it to the STFT
//! grid; `mfcc` derives a deterministic stand-in from the log-mel
//! spectrogram. The trainable pre-net to 192 dims lives in the model.

use std::f64::consts::PI;
use std::path::Path;

use super::projection::{apply, orthonormal_projection};
use super::rafe::FeatureFile;
use crate::dsp::mel::MelSpectrogram;
use crate::error::{Error, Result};

pub const CONTENT_SOURCE_DIM: usize = 1024;
pub const MFCC_COEFFS: usize = 13;
/// Largest frame-count difference fixed by padding or truncation.
pub const MAX_ALIGN_FRAMES: usize = 2;
const PROJECTION_SEED: u64 = 0x00c0_47e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentProvider {
    Mfcc,
    File,
}

impl ContentProvider {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(Self::Mfcc),
            "file" => Ok(Self::File),
            other => Err(Error::InvalidConfig(format!("unknown content provider `{other}`"))),
        }
    }
}

/// `frames x dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentFrames {
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl ContentFrames {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// Channel-major copy, `dim x frames`.
    pub fn transposed(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for t in 0..self.frames {
            for d in 0..self.dim {
                out[d * self.frames + t] = self.values[t * self.dim + d];
            }
        }
        out
    }
}

/// Truncates or repeats the last frame to reach `frames`; fails when the
/// difference exceeds [`MAX_ALIGN_FRAMES`].
pub fn align_frames(rows: &[f64], dim: usize, frames: usize) -> Result<Vec<f64>> {
    let have = rows.len() / dim;
    if have == 0 || have.abs_diff(frames) > MAX_ALIGN_FRAMES {
        return Err(Error::FeatureAlignment(format!(
            "feature has {have} frames, utterance grid has {frames}"
        )));
    }
    let mut out = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        let src = t.min(have - 1);
        out.extend_from_slice(&rows[src * dim..(src + 1) * dim]);
    }
    Ok(out)
}

/// Orthonormal DCT-II of each log-mel frame, first `MFCC_COEFFS` terms.
pub fn mfcc(mel: &MelSpectrogram) -> Vec<Vec<f64>> {
    let n = mel.mel_bands;
    (0..mel.frames)
        .map(|t| {
            let frame = mel.frame(t);
            (0..MFCC_COEFFS)
                .map(|k| {
                    let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                    scale
                        * frame
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos())
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// MFCCs plus central first differences, projected to 1024 dims by a fixed
/// orthonormal matrix.
pub fn mfcc_content(mel: &MelSpectrogram) -> ContentFrames {
    let c = mfcc(mel);
    let t_max = c.len().saturating_sub(1);
    let proj = orthonormal_projection(CONTENT_SOURCE_DIM, 2 * MFCC_COEFFS, PROJECTION_SEED);
    let mut values = Vec::with_capacity(c.len() * CONTENT_SOURCE_DIM);
    for t in 0..c.len() {
        let (prev, next) = (&c[t.saturating_sub(1)], &c[(t + 1).min(t_max)]);
        let mut v = c[t].clone();
        v.extend(prev.iter().zip(next).map(|(p, n)| 0.5 * (n - p)));
        values.extend(apply(&proj, CONTENT_SOURCE_DIM, &v));
    }
    ContentFrames {
        frames: c.len(),
        dim: CONTENT_SOURCE_DIM,
        values,
    }
}

/// Loads a `T x 1024` RAFE dump aligned to `frames`.
pub fn content_from_file(path: &Path, frames: usize) -> Result<ContentFrames> {
    let file = FeatureFile::read(path)?;
    content_from_feature(&file, frames)
}

pub fn content_from_feature(file: &FeatureFile, frames: usize) -> Result<ContentFrames> {
    if file.dim != CONTENT_SOURCE_DIM || file.frames == 0 {
        return Err(Error::FeatureFile(format!(
            "content features must be T x {CONTENT_SOURCE_DIM}, found {} x {}",
            file.frames, file.dim
        )));
    }
    let rows: Vec<f64> = file.values.iter().map(|&v| v as f64).collect();
    Ok(ContentFrames {
        frames,
        dim: CONTENT_SOURCE_DIM,
        values: align_frames(&rows, CONTENT_SOURCE_DIM, frames)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel::mel_spectrogram;
    use crate::dsp::stft::StftConfig;
    use crate::dsp::AudioBuffer;

    #[test]
    fn short_file_repeats_last_frame() {
        let rows: Vec<f64> = (0..124 * 2).map(|i| i as f64).collect();
        let out = align_frames(&rows, 2, 126).unwrap();
        assert_eq!(out.len(), 126 * 2);
        assert_eq!(&out[123 * 2..], &[246.0, 247.0, 246.0, 247.0, 246.0, 247.0]);
        assert!(matches!(align_frames(&rows, 2, 127), Err(Error::FeatureAlignment(_))));
        assert_eq!(align_frames(&rows, 2, 122).unwrap(), rows[..244].to_vec());
    }

    #[test]
    fn mfcc_provider_is_deterministic() {
        let x = (0..16000).map(|i| ((i as f64) * 0.05).sin() * 0.3).collect();
        let mel = mel_spectrogram(&AudioBuffer::new(x, 16000).unwrap(), &StftConfig::default(), 80).unwrap();
        let a = mfcc_content(&mel);
        let b = mfcc_content(&mel);
        assert_eq!(a, b);
        assert_eq!((a.frames, a.dim), (126, 1024));
    }

    #[test]
    fn file_provider_shape() {
        let file = FeatureFile {
            frames: 126,
            dim: 1024,
            values: vec![0.25; 126 * 1024],
        };
        let c = content_from_feature(&file, 126).unwrap();
        assert_eq!((c.frames, c.dim), (126, 1024));
        let wrong = FeatureFile {
            frames: 126,
            dim: 512,
            values: vec![0.0; 126 * 512],
        };
        assert!(matches!(content_from_feature(&wrong, 126), Err(Error::FeatureFile(_))));
    }
}
