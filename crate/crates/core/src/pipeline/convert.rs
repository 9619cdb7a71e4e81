//! Voice conversion: source content and melody, target timbre.

use std::path::Path;

use super::config::PipelineConfig;
use super::dataset::{compute_features, Features};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::f0::{f0_indices, shift_f0, F0Contour};
use crate::features::speaker::{embed_speaker, mel_stats, SpeakerEmbedding};
use crate::model::{ConditionInputs, Model};
use crate::nn::checkpoint::load_params;
use crate::nn::{Real, Tensor};

/// Peak level applied when the output would clip.
pub const OUTPUT_PEAK_DBFS: f64 = -1.0;

/// Loads a checkpoint into a model built from `cfg`.
pub fn load_model(cfg: &PipelineConfig, checkpoint: &Path) -> Result<(Model<f32>, u64)> {
    let mut model = Model::<f32>::new(cfg.model_config(), cfg.seed)?;
    let step = load_params(checkpoint, &mut model.store)?;
    Ok((model, step))
}

/// The F0 contour the converted audio should follow.
pub fn conversion_f0(source: &F0Contour, target: &F0Contour) -> Result<F0Contour> {
    shift_f0(source, target)
}

/// Condition inputs for one utterance, `T` frames of `features`.
pub fn condition_inputs<R: Real>(features: &Features, f0: &F0Contour, speaker_stats: &[f64]) -> Result<ConditionInputs<R>> {
    if f0.frames() != features.frames {
        return Err(Error::FeatureAlignment(format!(
            "F0 has {} frames, content has {}",
            f0.frames(),
            features.frames
        )));
    }
    let t = features.frames;
    Ok(ConditionInputs {
        content: Tensor::from_f64(&[1, features.content.dim, t], &features.content.transposed())?,
        speaker_stats: Tensor::from_f64(&[1, speaker_stats.len()], speaker_stats)?,
        emotion: Tensor::from_f64(&[1, features.emotion.values.len()], &features.emotion.values)?,
        f0_rows: f0_indices(f0),
    })
}

/// Result of one conversion.
#[derive(Debug, Clone)]
pub struct Conversion {
    pub audio: AudioBuffer,
    pub intended_f0: F0Contour,
    pub target_speaker: SpeakerEmbedding,
    pub normalized: bool,
}

/// Converts `source` toward the voice of `target`.
pub fn convert_audio(cfg: &PipelineConfig, model: &Model<f32>, source: &AudioBuffer, target: &AudioBuffer, source_path: Option<&Path>) -> Result<Conversion> {
    let src = compute_features(cfg, source, source_path)?;
    // Only the target's mel and F0 are used, so side files are never read.
    let mut target_cfg = cfg.clone();
    target_cfg.providers = Default::default();
    let tgt = compute_features(&target_cfg, target, None)?;
    let intended_f0 = conversion_f0(&src.f0, &tgt.f0)?;
    let stats = mel_stats(&tgt.mel)?;
    let cond = condition_inputs::<f32>(&src, &intended_f0, &stats)?;
    let wave = model.synthesize(&cond, cfg.inference.noise_scale, cfg.seed)?;
    let mut audio = AudioBuffer::new(wave[..source.len().min(wave.len())].to_vec(), source.sample_rate)?;
    let normalized = audio.normalize_if_clipping(OUTPUT_PEAK_DBFS);
    let target_speaker = embed_speaker(&tgt.mel, &model.store)?;
    Ok(Conversion {
        audio,
        intended_f0,
        target_speaker,
        normalized,
    })
}

/// File-level conversion used by the CLI.
pub fn convert(cfg: &PipelineConfig, checkpoint: &Path, source: &Path, target: &Path, out: &Path) -> Result<Conversion> {
    let (model, _) = load_model(cfg, checkpoint)?;
    let src = read_wav(source)?;
    let tgt = read_wav(target)?;
    let conv = convert_audio(cfg, &model, &src, &tgt, Some(source))?;
    write_wav(out, &conv.audio)?;
    Ok(conv)
}
