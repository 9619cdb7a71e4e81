//! Short-time Fourier transform and its weighted overlap-add inverse.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hann" => Ok(Window::Hann),
            "rectangular" | "rect" => Ok(Window::Rectangular),
            other => Err(Error::InvalidConfig(format!("unknown window `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }

    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window: Window,
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_length: 512,
            hop_length: 128,
            window: Window::Hann,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a centered transform of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if self.center {
            1 + len / self.hop_length
        } else if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop_length
        }
    }

    /// The window zero-padded (centered) to `n_fft` samples.
    pub fn padded_window(&self) -> Vec<f64> {
        let w = self.window.coefficients(self.win_length);
        let mut out = vec![0.0; self.n_fft];
        let offset = (self.n_fft - self.win_length) / 2;
        out[offset..offset + self.win_length].copy_from_slice(&w);
        out
    }

    /// Checks sizes and the constant-overlap-add condition of the window.
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.win_length == 0 || self.hop_length == 0 {
            return Err(Error::InvalidConfig("stft sizes must be positive".into()));
        }
        if !self.n_fft.is_multiple_of(2) {
            return Err(Error::InvalidConfig("n_fft must be even".into()));
        }
        if self.win_length > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "win_length {} exceeds n_fft {}",
                self.win_length, self.n_fft
            )));
        }
        if !self.win_length.is_multiple_of(self.hop_length) {
            return Err(Error::InvalidConfig(format!(
                "hop_length {} does not divide win_length {}",
                self.hop_length, self.win_length
            )));
        }
        let w = self.padded_window();
        let sums: Vec<f64> = (0..self.hop_length)
            .map(|r| w.iter().skip(r).step_by(self.hop_length).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let worst = sums.iter().fold(0.0f64, |m, s| m.max((s - mean).abs()));
        if mean <= 0.0 || worst > 1e-9 * mean {
            return Err(Error::InvalidConfig(format!(
                "{} window with hop {} violates constant overlap-add",
                self.window.name(),
                self.hop_length
            )));
        }
        Ok(())
    }
}

/// Frames x bins complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            values: vec![Complex64::new(0.0, 0.0); frames * bins],
        }
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.values[t * self.bins..(t + 1) * self.bins]
    }

    /// Magnitudes as a bins x frames matrix (channel-major, the layout the
    /// posterior encoder consumes).
    pub fn magnitudes_channel_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.frames * self.bins];
        for t in 0..self.frames {
            for (k, v) in self.frame(t).iter().enumerate() {
                out[k * self.frames + t] = v.norm();
            }
        }
        out
    }
}

/// Index into a signal of length `len` with mirror reflection (no edge
/// repeat), folding as many times as needed for short signals.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Signal as seen by the framing: reflect-padded by `n_fft / 2` when centered.
fn framed_source(samples: &[f64], cfg: &StftConfig) -> Vec<f64> {
    if !cfg.center {
        return samples.to_vec();
    }
    let pad = (cfg.n_fft / 2) as isize;
    let len = samples.len();
    (0..len as isize + 2 * pad)
        .map(|i| samples[reflect_index(i - pad, len)])
        .collect()
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if audio.is_empty() {
        return Err(Error::InvalidInput("stft of empty audio".into()));
    }
    cfg.validate()?;
    let frames = cfg.frames_for(audio.len());
    if frames == 0 {
        return Err(Error::InvalidInput(format!(
            "{} samples is shorter than one {}-point frame",
            audio.len(),
            cfg.n_fft
        )));
    }
    let source = framed_source(&audio.samples, cfg);
    let window = cfg.padded_window();
    let bins = cfg.bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut spec = ComplexSpectrogram::zeros(frames, bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    for t in 0..frames {
        let start = t * cfg.hop_length;
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(source[start + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        let row = spec.frame_mut(t);
        row.copy_from_slice(&buf[..bins]);
        // Exact zeros, not round-off, for real input.
        row[0].im = 0.0;
        row[bins - 1].im = 0.0;
    }
    Ok(spec)
}

/// Inverse STFT by weighted overlap-add with squared-window normalization.
/// Output is truncated or zero-padded to `out_len` samples.
pub fn istft(
    spec: &ComplexSpectrogram,
    cfg: &StftConfig,
    out_len: usize,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    cfg.validate()?;
    if spec.bins != cfg.bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, config expects {}",
            spec.bins,
            cfg.bins()
        )));
    }
    if spec.values.len() != spec.frames * spec.bins {
        return Err(Error::Shape("spectrogram value count mismatch".into()));
    }
    let n_fft = cfg.n_fft;
    let window = cfg.padded_window();
    let total = n_fft + cfg.hop_length * spec.frames.saturating_sub(1);
    let mut acc = vec![0.0; total];
    let mut envelope = vec![0.0; total];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let scale = 1.0 / n_fft as f64;
    for t in 0..spec.frames {
        let row = spec.frame(t);
        // Hermitian extension; DC and Nyquist imaginary parts are discarded.
        buf[0] = Complex64::new(row[0].re, 0.0);
        buf[n_fft / 2] = Complex64::new(row[n_fft / 2].re, 0.0);
        for k in 1..n_fft / 2 {
            buf[k] = row[k];
            buf[n_fft - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_length;
        for n in 0..n_fft {
            acc[start + n] += buf[n].re * scale * window[n];
            envelope[start + n] += window[n] * window[n];
        }
    }
    let offset = if cfg.center { n_fft / 2 } else { 0 };
    let mut samples = vec![0.0; out_len];
    for (i, s) in samples.iter_mut().enumerate() {
        let j = i + offset;
        if j >= total {
            break;
        }
        if envelope[j] < 1e-11 {
            if acc[j].abs() > 0.0 {
                return Err(Error::numerical(
                    "istft",
                    format!("zero window envelope at sample {i}"),
                ));
            }
            continue;
        }
        *s = acc[j] / envelope[j];
    }
    AudioBuffer::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_audio(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16000).unwrap()
    }

    #[test]
    fn frame_count_for_one_second() {
        let spec = stft(&random_audio(16000, 1), &StftConfig::default()).unwrap();
        assert_eq!(spec.frames, 126);
        assert_eq!(spec.bins, 257);
    }

    #[test]
    fn silence_gives_zero_spectrum() {
        let spec = stft(&AudioBuffer::silence(16000, 16000), &StftConfig::default()).unwrap();
        assert!(spec.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn dc_and_nyquist_are_real() {
        let spec = stft(&random_audio(4000, 2), &StftConfig::default()).unwrap();
        for t in 0..spec.frames {
            assert_eq!(spec.frame(t)[0].im, 0.0);
            assert_eq!(spec.frame(t)[256].im, 0.0);
        }
    }

    #[test]
    fn impulse_magnitude_equals_window_value() {
        // Direct DFT of a single impulse at position p inside frame t: every
        // bin has magnitude w[p].
        let cfg = StftConfig::default();
        let mut samples = vec![0.0; 4096];
        let t = 10;
        let p = 200; // offset inside the frame
        let pos = t * cfg.hop_length + p - cfg.n_fft / 2;
        samples[pos] = 1.0;
        let spec = stft(&AudioBuffer::new(samples, 16000).unwrap(), &cfg).unwrap();
        let w = cfg.padded_window();
        let direct: Vec<f64> = (0..cfg.bins())
            .map(|k| {
                let ang = -2.0 * PI * (k * p) as f64 / cfg.n_fft as f64;
                (Complex64::new(ang.cos(), ang.sin()) * w[p]).norm()
            })
            .collect();
        for (k, d) in direct.iter().enumerate() {
            assert!((spec.frame(t)[k].norm() - d).abs() < 1e-12);
            assert!((d - w[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_interior() {
        let cfg = StftConfig::default();
        let x = random_audio(16000, 3);
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len(), 16000).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 512..x.len() - 512 {
            num += (x.samples[i] - y.samples[i]).powi(2);
            den += x.samples[i].powi(2);
        }
        assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let cfg = StftConfig::default();
        let y = istft(&ComplexSpectrogram::zeros(20, 257), &cfg, 2000, 16000).unwrap();
        assert!(y.samples.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn single_frame_recovers_windowed_sinusoid() {
        // Non-centered single frame: the inverse sees w * seg, re-windows to
        // w^2 * seg and divides by the w^2 envelope, recovering seg wherever
        // the window is nonzero.
        let cfg = StftConfig {
            center: false,
            ..StftConfig::default()
        };
        let w = cfg.padded_window();
        let seg: Vec<f64> = (0..512)
            .map(|n| w[n] * (2.0 * PI * 250.0 * n as f64 / 16000.0).sin())
            .collect();
        let spec = stft(&AudioBuffer::new(seg.clone(), 16000).unwrap(), &cfg).unwrap();
        assert_eq!(spec.frames, 1);
        let y = istft(&spec, &cfg, 512, 16000).unwrap();
        for (n, (a, b)) in y.samples.iter().zip(&seg).enumerate().skip(1) {
            assert!((a - b).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn rejects_empty_and_non_cola() {
        assert!(matches!(
            stft(&AudioBuffer::silence(0, 16000), &StftConfig::default()),
            Err(Error::InvalidInput(_))
        ));
        let bad = StftConfig {
            hop_length: 384,
            win_length: 384,
            n_fft: 512,
            ..StftConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = StftConfig {
            hop_length: 200,
            ..StftConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn parseval_with_window_normalization() {
        // Signal zero near both edges so the reflect padding contributes
        // nothing; interior Hann^2 overlap at hop N/4 sums to 1.5.
        let cfg = StftConfig::default();
        let mut x = random_audio(8000, 4);
        for i in 0..600 {
            x.samples[i] = 0.0;
            let j = x.samples.len() - 1 - i;
            x.samples[j] = 0.0;
        }
        let spec = stft(&x, &cfg).unwrap();
        let n = cfg.n_fft as f64;
        let mut spectral = 0.0;
        for t in 0..spec.frames {
            let row = spec.frame(t);
            spectral += row[0].norm_sqr() + row[256].norm_sqr();
            spectral += 2.0 * row[1..256].iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        let energy: f64 = x.samples.iter().map(|s| s * s).sum();
        let rel = (spectral / (n * 1.5) - energy).abs() / energy;
        assert!(rel < 1e-6, "rel={rel}");
    }

    #[test]
    fn reflect_index_folds() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-9, 5), 1);
        assert_eq!(reflect_index(3, 1), 0);
    }
}
