//! Objective metrics: mel distance, F0 control error, embedding similarity
//! and a combined report.

use std::fmt;

use crate::dsp::mel::mel_spectrogram;
use crate::dsp::stft::StftConfig;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::f0::{track_f0, F0Contour};
use crate::features::speaker::SpeakerEmbedding;

/// Mean absolute difference of the two log-mel matrices.
pub fn mel_l1(a: &AudioBuffer, b: &AudioBuffer, cfg: &StftConfig, mel_bands: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "mel_l1 needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mel_spectrogram(a, cfg, mel_bands)?, mel_spectrogram(b, cfg, mel_bands)?);
    let sum: f64 = ma.values.iter().zip(&mb.values).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / ma.values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Error {
    /// Hz, over frames voiced in both contours.
    pub rmse: f64,
    /// Fraction of frames whose voicing decisions agree.
    pub voicing_agreement: f64,
    pub co_voiced: usize,
}

/// Compares an intended contour with one already tracked.
pub fn f0_rmse_contours(intended: &F0Contour, tracked: &F0Contour) -> Result<F0Error> {
    let n = intended.frames().min(tracked.frames());
    if n == 0 {
        return Err(Error::InsufficientVoicing("empty F0 contour".into()));
    }
    let mut sq = 0.0;
    let mut co = 0;
    let mut agree = 0;
    for t in 0..n {
        let (vi, vt) = (intended.voiced[t], tracked.voiced[t]);
        if vi == vt {
            agree += 1;
        }
        if vi && vt {
            sq += (intended.f0_hz[t] - tracked.f0_hz[t]).powi(2);
            co += 1;
        }
    }
    if co == 0 {
        return Err(Error::InsufficientVoicing("no frame is voiced in both contours".into()));
    }
    Ok(F0Error {
        rmse: (sq / co as f64).sqrt(),
        voicing_agreement: agree as f64 / n as f64,
        co_voiced: co,
    })
}

/// Tracks `audio` and compares it with `intended`.
pub fn f0_rmse(intended: &F0Contour, audio: &AudioBuffer, cfg: &StftConfig) -> Result<F0Error> {
    f0_rmse_contours(intended, &track_f0(audio, cfg)?)
}

/// Cosine of two unit embeddings.
pub fn speaker_cosine(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> f64 {
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

/// Metric values; absent fields are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub mel_l1: Option<f64>,
    pub f0_rmse_voiced: Option<f64>,
    pub speaker_cosine: Option<f64>,
    pub rtf: Option<f64>,
    pub config_hash: String,
    pub checkpoint_step: Option<u64>,
}

pub const REPORT_HEADER: &str = "config_hash,checkpoint_step,mel_l1,f0_rmse_voiced,speaker_cosine,rtf";

fn field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricReport {
    /// Checks that every present value is finite and in range.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mel_l1, self.f0_rmse_voiced, self.speaker_cosine, self.rtf]
            .iter()
            .flatten()
            .all(|v| v.is_finite());
        let ranges = self.mel_l1.is_none_or(|v| v >= 0.0)
            && self.f0_rmse_voiced.is_none_or(|v| v >= 0.0)
            && self.speaker_cosine.is_none_or(|v| (-1.0..=1.0).contains(&v))
            && self.rtf.is_none_or(|v| v > 0.0);
        if finite && ranges {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("metric report out of range: {self:?}")))
        }
    }

    /// One CSV line under [`REPORT_HEADER`]; absent values are empty.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.config_hash,
            self.checkpoint_step.map_or_else(String::new, |s| s.to_string()),
            field(self.mel_l1),
            field(self.f0_rmse_voiced),
            field(self.speaker_cosine),
            field(self.rtf)
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "mel L1:          {}", show(self.mel_l1))?;
        writeln!(f, "F0 RMSE (Hz):    {}", show(self.f0_rmse_voiced))?;
        writeln!(f, "speaker cosine:  {}", show(self.speaker_cosine))?;
        write!(f, "RTF:             {}", show(self.rtf))
    }
}
