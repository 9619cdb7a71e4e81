//! Model dimensions and loss weights.

use crate::error::{Error, Result};
use crate::features::conditions::{ConditionBlock, CONDITION_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub spec_bins: usize,
    pub mel_bands: usize,
    pub n_fft: usize,
    pub hop_length: usize,
    pub d_z: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub posterior_layers: usize,
    pub flow_blocks: usize,
    pub flow_layers: usize,
    pub prior_layers: usize,
    pub cond_dim: usize,
    pub content_source_dim: usize,
    pub speaker_stats_dim: usize,
    /// Widths of the MS-iSTFT decoder: input conv, after x4, after x2.
    pub decoder_channels: [usize; 3],
    pub streams: usize,
    pub sub_n_fft: usize,
    pub sub_hop: usize,
    /// Baseline width; 0 picks the multiple of 16 whose parameter count is
    /// closest to the MS-iSTFT decoder's.
    pub baseline_width: usize,
    pub disc_channels: [usize; 4],
    pub log_sigma_min: f64,
    pub log_sigma_max: f64,
    pub lambda_mel: f64,
    pub lambda_fm: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            spec_bins: 257,
            mel_bands: 80,
            n_fft: 512,
            hop_length: 128,
            d_z: 192,
            hidden: 192,
            kernel: 5,
            posterior_layers: 8,
            flow_blocks: 4,
            flow_layers: 2,
            prior_layers: 4,
            cond_dim: CONDITION_DIM,
            content_source_dim: 1024,
            speaker_stats_dim: 160,
            decoder_channels: [256, 128, 64],
            streams: 4,
            sub_n_fft: 16,
            sub_hop: 4,
            baseline_width: 0,
            disc_channels: [16, 32, 64, 128],
            log_sigma_min: -9.0,
            log_sigma_max: 2.0,
            lambda_mel: 45.0,
            lambda_fm: 2.0,
            leaky_slope: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn sub_bins(&self) -> usize {
        self.sub_n_fft / 2 + 1
    }

    /// Waveform samples produced per latent frame.
    pub fn samples_per_frame(&self) -> usize {
        8 * self.sub_hop * self.streams
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_z < 2 || !self.d_z.is_multiple_of(2) {
            return bad(format!("model.d_z must be even and at least 2, got {}", self.d_z));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("model.kernel must be odd, got {}", self.kernel));
        }
        if self.hidden == 0 || self.posterior_layers == 0 || self.flow_layers == 0 || self.prior_layers == 0 {
            return bad("model widths and layer counts must be positive".into());
        }
        if self.cond_dim != CONDITION_DIM || ConditionBlock::Content.dim() != 192 {
            return bad(format!("model.cond_dim must be {CONDITION_DIM}"));
        }
        if self.spec_bins != self.n_fft / 2 + 1 {
            return bad(format!("spec_bins {} does not match n_fft {}", self.spec_bins, self.n_fft));
        }
        if self.samples_per_frame() != self.hop_length {
            return bad(format!(
                "decoder yields {} samples per frame but hop_length is {}",
                self.samples_per_frame(),
                self.hop_length
            ));
        }
        if !self.sub_n_fft.is_multiple_of(self.sub_hop) || self.sub_n_fft / self.sub_hop < 2 {
            return bad("sub-band hop must divide sub-band n_fft with overlap".into());
        }
        if self.log_sigma_min.is_nan() || self.log_sigma_max.is_nan() || self.log_sigma_min >= self.log_sigma_max {
            return bad("log_sigma_min must be below log_sigma_max".into());
        }
        if self.lambda_mel < 0.0 || self.lambda_fm < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }
}
