//! YIN pitch tracking and the mean-difference F0 shift, with F0 binning for
//! the embedding table.

use crate::dsp::stft::StftConfig;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 1100.0;
/// Voiced frames fall into one of this many log-spaced bins.
pub const F0_BINS: usize = 256;
/// Embedding row reserved for unvoiced frames.
pub const UNVOICED_ROW: usize = F0_BINS;
pub const F0_EMBED_DIM: usize = 64;

/// Per-frame F0 in Hz; 0 on unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Contour {
    /// Builds a contour from Hz values, treating values `<= 0` as unvoiced.
    pub fn from_hz(f0_hz: Vec<f64>) -> Result<Self> {
        if let Some(v) = f0_hz.iter().find(|v| !v.is_finite() || (**v > 0.0 && !(F0_MIN_HZ..=F0_MAX_HZ).contains(*v))) {
            return Err(Error::InvalidInput(format!("F0 value {v} outside [{F0_MIN_HZ}, {F0_MAX_HZ}] Hz")));
        }
        let f0_hz: Vec<f64> = f0_hz.into_iter().map(|v| v.max(0.0)).collect();
        let voiced = f0_hz.iter().map(|&v| v > 0.0).collect();
        Ok(Self { f0_hz, voiced })
    }

    pub fn frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    pub fn voiced_mean(&self) -> Option<f64> {
        let n = self.voiced_count();
        (n > 0).then(|| {
            self.f0_hz
                .iter()
                .zip(&self.voiced)
                .filter(|(_, &v)| v)
                .map(|(f, _)| f)
                .sum::<f64>()
                / n as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YinConfig {
    pub threshold: f64,
    /// Integration window in samples.
    pub window: usize,
    pub min_hz: f64,
    pub max_hz: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            window: 512,
            min_hz: F0_MIN_HZ,
            max_hz: F0_MAX_HZ,
        }
    }
}

/// One F0 estimate per STFT frame with the default YIN settings.
pub fn track_f0(audio: &AudioBuffer, cfg: &StftConfig) -> Result<F0Contour> {
    track_f0_with(audio, cfg, &YinConfig::default())
}

pub fn track_f0_with(audio: &AudioBuffer, cfg: &StftConfig, yin: &YinConfig) -> Result<F0Contour> {
    if audio.len() < yin.window {
        return Err(Error::InvalidInput(format!(
            "audio has {} samples, shorter than the {}-sample analysis window",
            audio.len(),
            yin.window
        )));
    }
    let sr = audio.sample_rate as f64;
    let tau_min = (sr / yin.max_hz).floor().max(2.0) as usize;
    let tau_max = (sr / yin.min_hz).ceil() as usize;
    let w = yin.window;
    let seg_len = w + tau_max;
    let frames = cfg.frames_for(audio.len());
    let x = &audio.samples;
    let mut seg = vec![0.0; seg_len];
    let mut diff = vec![0.0; tau_max + 2];
    let mut f0_hz = Vec::with_capacity(frames);
    for t in 0..frames {
        // Edge frames analyze the nearest fully covered segment.
        let mut start = (t * cfg.hop_length) as isize - (seg_len / 2) as isize;
        if x.len() >= seg_len {
            start = start.clamp(0, (x.len() - seg_len) as isize);
        }
        for (j, s) in seg.iter_mut().enumerate() {
            let i = start + j as isize;
            *s = if i >= 0 && (i as usize) < x.len() { x[i as usize] } else { 0.0 };
        }
        let energy: f64 = seg[..w].iter().map(|v| v * v).sum();
        if energy < 1e-10 * w as f64 {
            f0_hz.push(0.0);
            continue;
        }
        for (tau, d) in diff.iter_mut().enumerate().take(tau_max + 2).skip(1) {
            if tau + w > seg_len {
                *d = f64::INFINITY;
                continue;
            }
            *d = (0..w).map(|j| (seg[j] - seg[j + tau]).powi(2)).sum();
        }
        f0_hz.push(pick_period(&diff, tau_min, tau_max, yin.threshold).map_or(0.0, |tau| {
            let f = sr / tau;
            if (yin.min_hz..=yin.max_hz).contains(&f) {
                f
            } else {
                0.0
            }
        }));
    }
    F0Contour::from_hz(f0_hz)
}

/// Fractional period from the difference function `d[1..]`, or `None` when
/// no lag dips below the threshold.
fn pick_period(d: &[f64], tau_min: usize, tau_max: usize, threshold: f64) -> Option<f64> {
    let mut cmnd = vec![1.0; d.len()];
    let mut running = 0.0;
    for tau in 1..d.len() {
        running += d[tau];
        cmnd[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    let mut tau = tau_min;
    while tau <= tau_max {
        if cmnd[tau] < threshold {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[(tau + 1).min(d.len() - 1)]);
            let denom = a - 2.0 * b + c;
            let shift = if denom.abs() > 1e-12 && c.is_finite() {
                (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            return Some(tau as f64 + shift);
        }
        tau += 1;
    }
    None
}

/// Adds the voiced-mean difference `mean(target) - mean(source)` to every
/// voiced source frame, clamping into the tracker range. Unvoiced frames
/// stay 0 and voicing flags are copied from the source.
pub fn shift_f0(source: &F0Contour, target: &F0Contour) -> Result<F0Contour> {
    let src = source
        .voiced_mean()
        .ok_or_else(|| Error::InsufficientVoicing("source contour has no voiced frames".into()))?;
    let tgt = target
        .voiced_mean()
        .ok_or_else(|| Error::InsufficientVoicing("target contour has no voiced frames".into()))?;
    let delta = tgt - src;
    let f0_hz = source
        .f0_hz
        .iter()
        .zip(&source.voiced)
        .map(|(&f, &v)| if v { (f + delta).clamp(F0_MIN_HZ, F0_MAX_HZ) } else { 0.0 })
        .collect();
    Ok(F0Contour {
        f0_hz,
        voiced: source.voiced.clone(),
    })
}

/// `floor(256 * ln(f / 50) / ln(22))`, clamped to the bin range.
pub fn f0_bin(hz: f64) -> usize {
    let pos = F0_BINS as f64 * (hz / F0_MIN_HZ).ln() / (F0_MAX_HZ / F0_MIN_HZ).ln();
    (pos.floor().max(0.0) as usize).min(F0_BINS - 1)
}

/// Embedding-table rows for every frame of a contour.
pub fn f0_indices(contour: &F0Contour) -> Vec<usize> {
    contour
        .f0_hz
        .iter()
        .zip(&contour.voiced)
        .map(|(&f, &v)| if v { f0_bin(f) } else { UNVOICED_ROW })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn tone(freq: f64, secs: f64) -> AudioBuffer {
        let n = (secs * 16000.0) as usize;
        AudioBuffer::new((0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(), 16000).unwrap()
    }

    #[test]
    fn tracks_220_hz_tone() {
        let c = track_f0(&tone(220.0, 1.0), &StftConfig::default()).unwrap();
        assert_eq!(c.frames(), 126);
        assert_eq!(c.voiced_count(), 126);
        for f in &c.f0_hz {
            assert!((f - 220.0).abs() < 1.0, "{f}");
        }
    }

    #[test]
    fn noise_is_mostly_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = (0..16000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let c = track_f0(&AudioBuffer::new(x, 16000).unwrap(), &StftConfig::default()).unwrap();
        assert!(c.voiced_count() as f64 <= 0.1 * c.frames() as f64, "{} voiced", c.voiced_count());
    }

    #[test]
    fn silence_is_unvoiced() {
        let c = track_f0(&AudioBuffer::silence(16000, 16000), &StftConfig::default()).unwrap();
        assert_eq!(c.voiced_count(), 0);
        assert!(c.f0_hz.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn short_audio_rejected() {
        let err = track_f0(&AudioBuffer::silence(100, 16000), &StftConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn shift_by_voiced_mean_difference() {
        let src = F0Contour::from_hz(vec![200.0, 0.0, 220.0]).unwrap();
        let tgt = F0Contour::from_hz(vec![150.0, 150.0]).unwrap();
        let out = shift_f0(&src, &tgt).unwrap();
        assert_eq!(out.f0_hz, vec![140.0, 0.0, 160.0]);
        assert_eq!(out.voiced, src.voiced);
        assert_eq!(shift_f0(&src, &src).unwrap(), src);
        let none = F0Contour::from_hz(vec![0.0, 0.0]).unwrap();
        assert!(matches!(shift_f0(&src, &none), Err(Error::InsufficientVoicing(_))));
        assert!(matches!(shift_f0(&none, &src), Err(Error::InsufficientVoicing(_))));
    }

    #[test]
    fn bin_endpoints_and_interior() {
        assert_eq!(f0_bin(50.0), 0);
        assert_eq!(f0_bin(1100.0), 255);
        assert_eq!(f0_bin(234.6), 128);
        let c = F0Contour::from_hz(vec![0.0, 0.0]).unwrap();
        assert_eq!(f0_indices(&c), vec![UNVOICED_ROW, UNVOICED_ROW]);
    }
}
