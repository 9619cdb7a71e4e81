//! Slaney-style mel filterbank and log-mel spectrograms.

use super::stft::{stft, ComplexSpectrogram, StftConfig};
use super::AudioBuffer;
use crate::error::{Error, Result};

/// Amplitude floor applied before the logarithm.
pub const MEL_FLOOR: f64 = 1e-5;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Hz to mel, linear below 1 kHz and logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    let min_log_mel = MIN_LOG_HZ / F_SP;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let min_log_mel = MIN_LOG_HZ / F_SP;
    if mel >= min_log_mel {
        MIN_LOG_HZ * ((mel - min_log_mel) * log_step()).exp()
    } else {
        mel * F_SP
    }
}

/// Triangular, area-normalized filters with band centers spread evenly on
/// the mel axis from 0 Hz to Nyquist inclusive.
///
/// The outermost triangles extend one band spacing past 0 Hz and Nyquist, so
/// every FFT bin in `[0, sr/2]` receives positive total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub bands: usize,
    pub bins: usize,
    /// bands x bins, row-major.
    pub weights: Vec<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(bands: usize, n_fft: usize, sample_rate: u32) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidConfig("mel_bands must be at least 1".into()));
        }
        let bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let spacing = if bands > 1 {
            top / (bands - 1) as f64
        } else {
            top
        };
        let center_mels: Vec<f64> = (0..bands).map(|i| i as f64 * spacing).collect();
        let edge = |i: isize| mel_to_hz(i as f64 * spacing);
        let centers_hz: Vec<f64> = center_mels.iter().map(|&m| mel_to_hz(m)).collect();
        let mut weights = vec![0.0; bands * bins];
        for b in 0..bands {
            let lo = edge(b as isize - 1);
            let mid = centers_hz[b];
            let hi = edge(b as isize + 1);
            let norm = 2.0 / (hi - lo);
            for k in 0..bins {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let w = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights[b * bins + k] = w.max(0.0) * norm;
            }
        }
        Ok(Self {
            bands,
            bins,
            weights,
            centers_hz,
        })
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.bins..(band + 1) * self.bins]
    }
}

/// Log-amplitude mel spectrogram, frames x bands row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub mel_bands: usize,
    pub values: Vec<f64>,
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.mel_bands..(t + 1) * self.mel_bands]
    }

    pub fn get(&self, t: usize, band: usize) -> f64 {
        self.values[t * self.mel_bands + band]
    }

    /// Same content in time-reversed frame order.
    pub fn reversed(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for t in (0..self.frames).rev() {
            values.extend_from_slice(self.frame(t));
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Applies a filterbank to spectrogram magnitudes and takes the floored log.
pub fn log_mel_from_spectrogram(spec: &ComplexSpectrogram, bank: &MelFilterbank) -> Result<MelSpectrogram> {
    if spec.bins != bank.bins {
        return Err(Error::Shape(format!(
            "filterbank expects {} bins, spectrogram has {}",
            bank.bins, spec.bins
        )));
    }
    let mut values = Vec::with_capacity(spec.frames * bank.bands);
    let mut mags = vec![0.0; spec.bins];
    for t in 0..spec.frames {
        for (m, v) in mags.iter_mut().zip(spec.frame(t)) {
            *m = v.norm();
        }
        for b in 0..bank.bands {
            let e: f64 = bank.row(b).iter().zip(&mags).map(|(w, m)| w * m).sum();
            values.push(e.max(MEL_FLOOR).ln());
        }
    }
    Ok(MelSpectrogram {
        frames: spec.frames,
        mel_bands: bank.bands,
        values,
    })
}

pub fn mel_spectrogram(audio: &AudioBuffer, cfg: &StftConfig, mel_bands: usize) -> Result<MelSpectrogram> {
    let bank = MelFilterbank::new(mel_bands, cfg.n_fft, audio.sample_rate)?;
    let spec = stft(audio, cfg)?;
    log_mel_from_spectrogram(&spec, &bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, len: usize) -> AudioBuffer {
        AudioBuffer::new(
            (0..len)
                .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 60.0, 440.0, 1000.0, 3000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn every_bin_is_covered() {
        let fb = MelFilterbank::new(80, 512, 16000).unwrap();
        for k in 0..fb.bins {
            let total: f64 = (0..fb.bands).map(|b| fb.row(b)[k]).sum();
            assert!(total > 0.0, "bin {k} uncovered");
        }
        for b in 0..fb.bands {
            let s: f64 = fb.row(b).iter().sum();
            assert!(s.is_finite() && s > 0.0);
            assert!(fb.row(b).iter().all(|w| *w >= 0.0));
        }
        assert_eq!(fb.centers_hz[0], 0.0);
        assert!((fb.centers_hz[79] - 8000.0).abs() < 1e-6);
    }

    #[test]
    fn silence_is_log_floor() {
        let mel = mel_spectrogram(&AudioBuffer::silence(16000, 16000), &StftConfig::default(), 80).unwrap();
        assert!(mel.values.iter().all(|v| *v == MEL_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_in_nearest_band() {
        let fb = MelFilterbank::new(80, 512, 16000).unwrap();
        let nearest = (0..80)
            .min_by(|&a, &b| {
                (fb.centers_hz[a] - 1000.0)
                    .abs()
                    .partial_cmp(&(fb.centers_hz[b] - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        let mel = mel_spectrogram(&tone(1000.0, 16000), &StftConfig::default(), 80).unwrap();
        let t = mel.frames / 2;
        let argmax = (0..80)
            .max_by(|&a, &b| mel.get(t, a).partial_cmp(&mel.get(t, b)).unwrap())
            .unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn shape_contract() {
        let mel = mel_spectrogram(&tone(333.0, 16000), &StftConfig::default(), 80).unwrap();
        assert_eq!((mel.frames, mel.mel_bands), (126, 80));
        assert_eq!(mel.values.len(), 126 * 80);
    }
}
