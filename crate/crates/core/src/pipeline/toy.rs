//! Synthetic singing dataset: band-limited harmonic voices shaped by
//! per-speaker formant filters and sung along scripted F0 trajectories.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::wav::write_wav;
use crate::dsp::{AudioBuffer, SAMPLE_RATE};
use crate::error::Result;

/// Spectral envelope and register of one synthetic singer.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpeaker {
    pub name: String,
    pub f0_mean: f64,
    /// `(center Hz, bandwidth Hz, gain)`.
    pub formants: Vec<(f64, f64, f64)>,
    /// Spectral tilt in dB per octave above the fundamental.
    pub tilt_db: f64,
}

impl ToySpeaker {
    /// Harmonic amplitude at frequency `hz`.
    fn envelope(&self, hz: f64, f0: f64) -> f64 {
        let formant: f64 = self
            .formants
            .iter()
            .map(|&(c, bw, gain)| gain * (-0.5 * ((hz - c) / bw).powi(2)).exp())
            .sum();
        let tilt = 10f64.powf(self.tilt_db * (hz / f0).log2() / 20.0);
        (0.05 + formant) * tilt
    }
}

/// The two default singers: a lower voice around 220 Hz and a higher one
/// around 330 Hz with different formant layouts.
pub fn default_speakers() -> Vec<ToySpeaker> {
    vec![
        ToySpeaker {
            name: "spk0".into(),
            f0_mean: 220.0,
            formants: vec![(650.0, 110.0, 1.0), (1100.0, 140.0, 0.7), (2500.0, 220.0, 0.35)],
            tilt_db: -3.0,
        },
        ToySpeaker {
            name: "spk1".into(),
            f0_mean: 330.0,
            formants: vec![(420.0, 90.0, 1.0), (2050.0, 180.0, 0.8), (3100.0, 260.0, 0.45)],
            tilt_db: -5.0,
        },
    ]
}

/// Per-sample F0 for clip `clip`: a four-note phrase around `mean` with
/// vibrato. The phrase offsets average to zero in log-frequency.
pub fn scripted_f0(mean: f64, seconds: f64, clip: usize) -> Vec<f64> {
    const PHRASES: [[f64; 4]; 4] = [[0.0, 2.0, -2.0, 0.0], [-3.0, 0.0, 3.0, 0.0], [2.0, -2.0, 1.0, -1.0], [0.0, -1.0, 1.0, 0.0]];
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let phrase = PHRASES[clip % PHRASES.len()];
    let rate = 4.5 + 0.35 * (clip % 5) as f64;
    let depth = 0.015;
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let note = ((t / seconds) * 4.0).floor().min(3.0) as usize;
            let semis = phrase[note];
            mean * 2f64.powf(semis / 12.0) * (1.0 + depth * (2.0 * PI * rate * t).sin())
        })
        .collect()
}

/// Sings `f0` (per-sample Hz) with `speaker`'s timbre.
pub fn sing(speaker: &ToySpeaker, f0: &[f64], seed: u64) -> AudioBuffer {
    let sr = SAMPLE_RATE as f64;
    let nyquist_guard = 0.45 * sr;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_harm = (nyquist_guard / 50.0) as usize;
    let phase0: Vec<f64> = (0..max_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let n = f0.len();
    let fade = (0.02 * sr) as usize;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for (i, &f) in f0.iter().enumerate() {
        phase += 2.0 * PI * f / sr;
        let mut v = 0.0;
        let mut k = 1;
        while (k as f64) * f < nyquist_guard && k <= max_harm {
            let hz = k as f64 * f;
            v += speaker.envelope(hz, f) * (k as f64 * phase + phase0[k - 1]).sin();
            k += 1;
        }
        let edge = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
        out.push(v * edge);
    }
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * 1e-3).collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples = out.iter().zip(&noise).map(|(v, e)| 0.5 * v / peak + e).collect();
    AudioBuffer {
        samples,
        sample_rate: SAMPLE_RATE,
    }
}

/// One clip of `speaker` at voiced mean near `f0_mean`.
pub fn toy_clip(speaker: &ToySpeaker, f0_mean: f64, seconds: f64, clip: usize, seed: u64) -> AudioBuffer {
    sing(speaker, &scripted_f0(f0_mean, seconds, clip), seed)
}

/// Writes `clips` WAV files per speaker into `dir` as
/// `<speaker>_clipNN.wav` and returns their paths in sorted order.
pub fn generate_dataset(dir: &Path, speakers: &[ToySpeaker], clips: usize, seconds: f64, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (s, spk) in speakers.iter().enumerate() {
        for c in 0..clips {
            let audio = toy_clip(spk, spk.f0_mean, seconds, c, seed ^ ((s as u64) << 32 | c as u64));
            let path = dir.join(format!("{}_clip{c:02}.wav", spk.name));
            write_wav(&path, &audio)?;
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::StftConfig;
    use crate::features::f0::track_f0;

    #[test]
    fn clips_track_near_the_speaker_mean() {
        for spk in default_speakers() {
            let audio = toy_clip(&spk, spk.f0_mean, 1.0, 1, 3);
            assert!(audio.peak() <= 0.51);
            let f0 = track_f0(&audio, &StftConfig::default()).unwrap();
            let mean = f0.voiced_mean().unwrap();
            assert!((mean - spk.f0_mean).abs() < 0.05 * spk.f0_mean, "{} tracked {mean}", spk.name);
            assert!(f0.voiced_count() > f0.frames() * 8 / 10);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spk = &default_speakers()[0];
        assert_eq!(toy_clip(spk, 220.0, 0.25, 0, 9), toy_clip(spk, 220.0, 0.25, 0, 9));
        assert_ne!(toy_clip(spk, 220.0, 0.25, 0, 9), toy_clip(spk, 220.0, 0.25, 0, 10));
    }
}
