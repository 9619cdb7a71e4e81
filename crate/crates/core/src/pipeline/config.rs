//! Pipeline configuration file.
//!
//! The format is line-based `key = value` with `#` comments; sections are
//! written as dotted keys (`stft.hop_length = 128`) or `[stft]` headers.
//! Every key is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::dsp::stft::{StftConfig, Window};
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::features::content::ContentProvider;
use crate::model::ModelConfig;
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window: String,
    pub center: bool,
    pub mel_bands: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_length: 512,
            hop_length: 128,
            window: "hann".into(),
            center: true,
            mel_bands: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_z: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub posterior_layers: usize,
    pub flow_blocks: usize,
    pub flow_layers: usize,
    pub prior_layers: usize,
    pub decoder_channels: [usize; 3],
    pub baseline_width: usize,
    pub disc_channels: [usize; 4],
    pub log_sigma_min: f64,
    pub log_sigma_max: f64,
    pub leaky_slope: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_z: m.d_z,
            hidden: m.hidden,
            kernel: m.kernel,
            posterior_layers: m.posterior_layers,
            flow_blocks: m.flow_blocks,
            flow_layers: m.flow_layers,
            prior_layers: m.prior_layers,
            decoder_channels: m.decoder_channels,
            baseline_width: m.baseline_width,
            disc_channels: m.disc_channels,
            log_sigma_min: m.log_sigma_min,
            log_sigma_max: m.log_sigma_max,
            leaky_slope: m.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_mel: f64,
    pub lambda_fm: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            lambda_mel: 45.0,
            lambda_fm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr_initial: f64,
    pub lr_decayed: f64,
    pub decay_step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: u64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr_initial: a.lr_initial,
            lr_decayed: a.lr_decayed,
            decay_step: a.decay_step,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            total_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    /// Latent frames per training crop.
    pub segment_frames: usize,
    pub checkpoint_interval: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 8,
            segment_frames: 32,
            checkpoint_interval: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    /// `mfcc` or `file` (`<stem>.content.rafe` next to each WAV).
    pub content: String,
    /// `none` or `file` (`<stem>.emotion.rafe` next to each WAV).
    pub emotion: String,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            content: "mfcc".into(),
            emotion: "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub noise_scale: f64,
    /// `prior`: sample the prior and invert the flow. `posterior` is
    /// reserved and rejected.
    pub path: String,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            noise_scale: 0.6,
            path: "prior".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    /// Feature cache directory; empty means `<wav-dir>/.flowsvc-cache`.
    pub cache_dir: String,
    /// Checkpoint whose `disc.*` tensors initialize the discriminator; empty
    /// means random initialization.
    pub discriminator: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub seed: u64,
    pub stft: StftSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub optim: OptimSection,
    pub train: TrainSection,
    pub providers: ProviderSection,
    pub inference: InferenceSection,
    pub paths: PathSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            seed: 0,
            stft: StftSection::default(),
            model: ModelSection::default(),
            loss: LossSection::default(),
            optim: OptimSection::default(),
            train: TrainSection::default(),
            providers: ProviderSection::default(),
            inference: InferenceSection::default(),
            paths: PathSection::default(),
        }
    }
}

/// Emotion source selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmotionProvider {
    None,
    File,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn stft_config(&self) -> Result<StftConfig> {
        Ok(StftConfig {
            n_fft: self.stft.n_fft,
            win_length: self.stft.win_length,
            hop_length: self.stft.hop_length,
            window: Window::parse(&self.stft.window)?,
            center: self.stft.center,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            spec_bins: self.stft.n_fft / 2 + 1,
            mel_bands: self.stft.mel_bands,
            n_fft: self.stft.n_fft,
            hop_length: self.stft.hop_length,
            d_z: m.d_z,
            hidden: m.hidden,
            kernel: m.kernel,
            posterior_layers: m.posterior_layers,
            flow_blocks: m.flow_blocks,
            flow_layers: m.flow_layers,
            prior_layers: m.prior_layers,
            decoder_channels: m.decoder_channels,
            baseline_width: m.baseline_width,
            disc_channels: m.disc_channels,
            log_sigma_min: m.log_sigma_min,
            log_sigma_max: m.log_sigma_max,
            leaky_slope: m.leaky_slope,
            lambda_mel: self.loss.lambda_mel,
            lambda_fm: self.loss.lambda_fm,
            speaker_stats_dim: 2 * self.stft.mel_bands,
            ..ModelConfig::default()
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        let o = &self.optim;
        AdamConfig {
            lr_initial: o.lr_initial,
            lr_decayed: o.lr_decayed,
            decay_step: o.decay_step,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        }
    }

    pub fn content_provider(&self) -> Result<ContentProvider> {
        ContentProvider::parse(&self.providers.content)
    }

    pub fn emotion_provider(&self) -> Result<EmotionProvider> {
        match self.providers.emotion.as_str() {
            "none" => Ok(EmotionProvider::None),
            "file" => Ok(EmotionProvider::File),
            other => Err(Error::InvalidConfig(format!("unknown emotion provider `{other}`"))),
        }
    }

    /// Cache directory for features of the WAV files in `wav_dir`.
    pub fn cache_dir(&self, wav_dir: &Path) -> PathBuf {
        if self.paths.cache_dir.is_empty() {
            wav_dir.join(".flowsvc-cache")
        } else {
            PathBuf::from(&self.paths.cache_dir)
        }
    }

    /// Hex SHA-256 of the settings that shape cached features.
    pub fn feature_hash(&self) -> String {
        let key = format!(
            "{:?}|{:?}|{}|{}",
            self.stft, self.sample_rate, self.providers.content, self.providers.emotion
        );
        hex(&Sha256::digest(key.as_bytes()))
    }

    /// Hex SHA-256 of the whole configuration.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(format!("{self:?}").as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sample_rate != SAMPLE_RATE {
            return bad(format!("sample_rate must be {SAMPLE_RATE}, got {}", self.sample_rate));
        }
        self.stft_config()?.validate()?;
        if self.stft.mel_bands == 0 {
            return bad("stft.mel_bands must be positive".into());
        }
        self.model_config().validate()?;
        let o = &self.optim;
        if !(o.lr_initial > 0.0 && o.lr_decayed > 0.0) {
            return bad("optim learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps.is_nan() || o.eps <= 0.0 {
            return bad("optim betas must lie in [0, 1) and eps must be positive".into());
        }
        if o.total_steps == 0 {
            return bad("optim.total_steps must be positive".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || t.segment_frames < 4 || t.checkpoint_interval == 0 {
            return bad("train.batch_size and train.checkpoint_interval must be positive; train.segment_frames at least 4".into());
        }
        self.content_provider()?;
        self.emotion_provider()?;
        if !(self.inference.noise_scale >= 0.0 && self.inference.noise_scale.is_finite()) {
            return bad("inference.noise_scale must be a non-negative number".into());
        }
        if self.inference.path != "prior" {
            return bad(format!(
                "inference.path `{}` is not supported; only `prior` is implemented",
                self.inference.path
            ));
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::parse("# nothing here\n").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.inference.noise_scale, 0.6);
    }

    #[test]
    fn dotted_keys_set_section_values() {
        let cfg = PipelineConfig::parse(
            "seed = 7\noptim.total_steps = 20  # short\ntrain.batch_size = 2\nproviders.content = \"mfcc\"\n",
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.optim.total_steps, cfg.train.batch_size), (7, 20, 2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["colour = 3\n", "stft.hop = 128\n", "[model]\nwidth = 3\n"] {
            assert!(matches!(PipelineConfig::parse(text), Err(Error::InvalidConfig(_))), "{text}");
        }
    }

    #[test]
    fn inconsistent_values_are_rejected() {
        for text in [
            "sample_rate = 22050\n",
            "stft.hop_length = 256\n",
            "model.d_z = 7\n",
            "providers.content = \"hubert\"\n",
            "inference.path = \"posterior\"\n",
            "optim.beta1 = 1.5\n",
        ] {
            assert!(matches!(PipelineConfig::parse(text), Err(Error::InvalidConfig(_))), "{text}");
        }
    }

    #[test]
    fn hashes_track_relevant_settings() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.seed = 3;
        assert_eq!(a.feature_hash(), b.feature_hash());
        assert_ne!(a.config_hash(), b.config_hash());
        b.stft.mel_bands = 64;
        assert_ne!(a.feature_hash(), b.feature_hash());
    }
}
