//! Deterministic signal-processing kernel.
//!
//! Everything here is a pure function of its inputs and runs in double
//! precision: STFT/iSTFT, mel spectrograms, the pseudo-QMF filterbank used by
//! the multi-stream decoder, and PCM16 WAV I/O.

pub mod mel;
pub mod pqmf;
pub mod stft;
pub mod wav;

pub use mel::{mel_spectrogram, MelFilterbank, MelSpectrogram, MEL_FLOOR};
pub use pqmf::{pqmf_analyze, pqmf_synthesize, PqmfBank};
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, Window};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Sample rate used by every pipeline default.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Scales the buffer so its peak sits at `peak_dbfs` if it would
    /// otherwise exceed full scale. Returns whether scaling happened.
    pub fn normalize_if_clipping(&mut self, peak_dbfs: f64) -> bool {
        let peak = self.peak();
        if peak <= 1.0 {
            return false;
        }
        let gain = 10f64.powf(peak_dbfs / 20.0) / peak;
        for s in &mut self.samples {
            *s *= gain;
        }
        true
    }
}
