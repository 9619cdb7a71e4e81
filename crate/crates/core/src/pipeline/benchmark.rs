//! Real-time-factor measurement of the two decoders.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::features::speaker::SPEAKER_DIM;
use crate::model::decoder::{baseline_param_count, baseline_width, msistft_param_count};
use crate::model::{standard_normal, DecoderKind, Model};
use crate::nn::Tensor;

/// Published full-system RTF on a desktop GPU, printed for context only.
pub const REFERENCE_RTF: f64 = 0.048;

/// Which decoders to time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderChoice {
    MsIstft,
    Baseline,
    Both,
}

impl DecoderChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "msistft" => Ok(Self::MsIstft),
            "baseline" => Ok(Self::Baseline),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidConfig(format!(
                "decoder must be msistft, baseline or both, got `{other}`"
            ))),
        }
    }

    fn kinds(self) -> Vec<DecoderKind> {
        match self {
            Self::MsIstft => vec![DecoderKind::MsIstft],
            Self::Baseline => vec![DecoderKind::Baseline],
            Self::Both => vec![DecoderKind::MsIstft, DecoderKind::Baseline],
        }
    }
}

/// `synthesis seconds / audio seconds`.
pub fn rtf(synthesis_seconds: f64, audio_seconds: f64) -> f64 {
    synthesis_seconds / audio_seconds
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTiming {
    pub kind: DecoderKind,
    pub params: usize,
    /// Wall-clock seconds of each timed run.
    pub runs: Vec<f64>,
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtfReport {
    pub audio_seconds: f64,
    pub frames: usize,
    pub timings: Vec<DecoderTiming>,
}

impl RtfReport {
    pub fn get(&self, kind: DecoderKind) -> Option<&DecoderTiming> {
        self.timings.iter().find(|t| t.kind == kind)
    }
}

impl fmt::Display for RtfReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "synthesized {:.2} s ({} frames)", self.audio_seconds, self.frames)?;
        for t in &self.timings {
            writeln!(
                f,
                "{:<9} params {:>9}  RTF {:.4}  ({} runs)",
                t.kind.name(),
                t.params,
                t.rtf,
                t.runs.len()
            )?;
        }
        write!(f, "reference full-system RTF: {REFERENCE_RTF} (context only)")
    }
}

/// Times decoding of `seconds` of audio from random latents: one warm-up
/// pass, then the mean over `runs` timed passes.
pub fn benchmark_rtf(model: &Model<f32>, seconds: f64, choice: DecoderChoice, runs: usize, seed: u64) -> Result<RtfReport> {
    if seconds.is_nan() || seconds <= 0.0 || runs == 0 {
        return Err(Error::InvalidInput("benchmark needs positive seconds and runs".into()));
    }
    let cfg = &model.cfg;
    let frames = ((seconds * crate::dsp::SAMPLE_RATE as f64) / cfg.hop_length as f64).ceil() as usize;
    let audio_seconds = (frames * cfg.hop_length) as f64 / crate::dsp::SAMPLE_RATE as f64;
    let z = standard_normal::<f32>(&[1, cfg.d_z, frames], seed);
    let raw = standard_normal::<f32>(&[SPEAKER_DIM], seed + 1);
    let norm = raw.data().iter().map(|v| v * v).sum::<f32>().sqrt();
    let speaker = Tensor::new(vec![1, SPEAKER_DIM], raw.data().iter().map(|v| v / norm).collect())?;
    let baseline = model.baseline_store(seed)?;
    let mut timings = Vec::new();
    for kind in choice.kinds() {
        let bstore = (kind == DecoderKind::Baseline).then_some(&baseline);
        let out = model.decode_only(kind, bstore, &z, &speaker)?;
        if out.len() != frames * cfg.hop_length {
            return Err(Error::Shape(format!("{} decoder produced {} samples", kind.name(), out.len())));
        }
        let times: Vec<f64> = (0..runs)
            .map(|_| {
                let t = Instant::now();
                model.decode_only(kind, bstore, &z, &speaker).map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<_>>()?;
        let mean = times.iter().sum::<f64>() / runs as f64;
        let params = match kind {
            DecoderKind::MsIstft => msistft_param_count(cfg),
            DecoderKind::Baseline => baseline_param_count(cfg, baseline_width(cfg)),
        };
        timings.push(DecoderTiming {
            kind,
            params,
            runs: times,
            rtf: rtf(mean, audio_seconds),
        });
    }
    Ok(RtfReport {
        audio_seconds,
        frames,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rtf_definition() {
        assert!((rtf(0.1, 2.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn choice_parsing() {
        assert_eq!(DecoderChoice::parse("both").unwrap(), DecoderChoice::Both);
        assert!(DecoderChoice::parse("hifigan").is_err());
    }
}
