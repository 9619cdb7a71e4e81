//! Cosine-modulated pseudo-QMF filterbank.
//!
//! A single Kaiser-windowed lowpass prototype is modulated into `S` analysis
//! and `S` synthesis filters. Analysis filters and decimates by `S`;
//! synthesis zero-stuffs by `S`, filters, and sums the streams.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Coefficients of one filterbank. Filters are applied as correlations with
/// `order / 2` samples of zero padding on each side, which keeps analysis
/// followed by synthesis time-aligned with the input.
#[derive(Debug, Clone, PartialEq)]
pub struct PqmfBank {
    pub num_streams: usize,
    pub order: usize,
    pub beta: f64,
    pub cutoff: f64,
    pub prototype: Vec<f64>,
    /// `num_streams` rows of `order + 1` taps.
    pub analysis: Vec<Vec<f64>>,
    pub synthesis: Vec<Vec<f64>>,
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn kaiser(len: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / (len - 1) as f64 - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn prototype_filter(order: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let omega = PI * cutoff;
    let mid = order as f64 / 2.0;
    let win = kaiser(order + 1, beta);
    (0..=order)
        .map(|n| {
            let x = n as f64 - mid;
            let ideal = if x == 0.0 {
                cutoff
            } else {
                (omega * x).sin() / (PI * x)
            };
            ideal * win[n]
        })
        .collect()
}

/// Short linear chirp used to score candidate cutoffs.
pub fn tuning_chirp(len: usize) -> Vec<f64> {
    let (f0, f1, sr) = (20.0, 7900.0, 16000.0);
    let dur = len as f64 / sr;
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t)).sin()
        })
        .collect()
}

/// Power of `(y - x)` relative to `x`, in dB, skipping `edge` samples at
/// both ends.
pub fn reconstruction_error_db(x: &[f64], y: &[f64], edge: usize) -> f64 {
    let n = x.len().min(y.len());
    let (mut num, mut den) = (0.0, 0.0);
    for i in edge..n.saturating_sub(edge) {
        num += (x[i] - y[i]).powi(2);
        den += x[i] * x[i];
    }
    10.0 * (num / den).log10()
}

impl PqmfBank {
    /// Builds a bank with the prototype cutoff chosen by minimizing the
    /// round-trip error on a chirp (golden-section search).
    pub fn new(num_streams: usize, order: usize, beta: f64) -> Result<Self> {
        if num_streams < 2 {
            return Err(Error::InvalidConfig(
                "a modulated bank needs at least two streams; use PqmfBank::identity".into(),
            ));
        }
        if !order.is_multiple_of(2) || order < 2 {
            return Err(Error::InvalidConfig("pqmf order must be even and positive".into()));
        }
        let chirp = tuning_chirp(2048 * num_streams);
        let score = |cutoff: f64| -> f64 {
            let bank = Self::with_cutoff(num_streams, order, beta, cutoff);
            let streams = bank.analyze_samples(&chirp);
            let y = bank.synthesize_samples(&streams);
            reconstruction_error_db(&chirp, &y, order)
        };
        let nominal = 1.0 / (2.0 * num_streams as f64);
        let (mut lo, mut hi) = (0.5 * nominal, 1.5 * nominal);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = hi - g * (hi - lo);
        let mut b = lo + g * (hi - lo);
        let (mut fa, mut fb) = (score(a), score(b));
        for _ in 0..60 {
            if fa < fb {
                hi = b;
                b = a;
                fb = fa;
                a = hi - g * (hi - lo);
                fa = score(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + g * (hi - lo);
                fb = score(b);
            }
            if hi - lo < 1e-7 {
                break;
            }
        }
        Ok(Self::with_cutoff(num_streams, order, beta, 0.5 * (lo + hi)))
    }

    /// The four-stream, order-62, beta-9 bank used by the decoder, built once.
    pub fn default_bank() -> &'static PqmfBank {
        static BANK: OnceLock<PqmfBank> = OnceLock::new();
        BANK.get_or_init(|| PqmfBank::new(4, 62, 9.0).expect("default pqmf parameters are valid"))
    }

    pub fn with_cutoff(num_streams: usize, order: usize, beta: f64, cutoff: f64) -> Self {
        let prototype = prototype_filter(order, cutoff, beta);
        let mid = order as f64 / 2.0;
        let s = num_streams as f64;
        let modulate = |k: usize, sign: f64| -> Vec<f64> {
            let phase = if k.is_multiple_of(2) { PI / 4.0 } else { -PI / 4.0 };
            prototype
                .iter()
                .enumerate()
                .map(|(n, h)| {
                    2.0 * h
                        * ((2 * k + 1) as f64 * (PI / (2.0 * s)) * (n as f64 - mid) + sign * phase).cos()
                })
                .collect()
        };
        let analysis = (0..num_streams).map(|k| modulate(k, 1.0)).collect();
        let synthesis = (0..num_streams).map(|k| modulate(k, -1.0)).collect();
        Self {
            num_streams,
            order,
            beta,
            cutoff,
            prototype,
            analysis,
            synthesis,
        }
    }

    /// Degenerate single-stream bank whose filters are unit impulses.
    pub fn identity() -> Self {
        Self {
            num_streams: 1,
            order: 0,
            beta: 0.0,
            cutoff: 1.0,
            prototype: vec![1.0],
            analysis: vec![vec![1.0]],
            synthesis: vec![vec![1.0]],
        }
    }

    /// Synthesis taps laid out as a transposed-convolution kernel
    /// `[streams, 1, order + 1]`: flipped, scaled by `S` for the zero-stuffing.
    pub fn synthesis_kernel(&self) -> Vec<f64> {
        let s = self.num_streams as f64;
        self.synthesis
            .iter()
            .flat_map(|row| row.iter().rev().map(move |c| c * s))
            .collect()
    }

    fn analyze_samples(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let half = (self.order / 2) as isize;
        let s = self.num_streams;
        let out_len = x.len().div_ceil(s);
        self.analysis
            .iter()
            .map(|h| {
                (0..out_len)
                    .map(|m| {
                        let t = (m * s) as isize;
                        h.iter()
                            .enumerate()
                            .map(|(j, c)| {
                                let i = t + j as isize - half;
                                if i < 0 || i >= x.len() as isize {
                                    0.0
                                } else {
                                    c * x[i as usize]
                                }
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    fn synthesize_samples(&self, streams: &[Vec<f64>]) -> Vec<f64> {
        let s = self.num_streams;
        let half = self.order / 2;
        let len = streams.first().map_or(0, |v| v.len()) * s;
        let mut out = vec![0.0; len];
        // out[t] = sum_k sum_j g_k[j] * S * u_k[t + j - half], where u_k is
        // non-zero only at multiples of S.
        for (g, stream) in self.synthesis.iter().zip(streams) {
            for (m, &v) in stream.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let src = m * s;
                for (j, c) in g.iter().enumerate() {
                    // src = t + j - half  =>  t = src + half - j
                    let t = src as isize + half as isize - j as isize;
                    if t >= 0 && (t as usize) < len {
                        out[t as usize] += c * s as f64 * v;
                    }
                }
            }
        }
        out
    }
}

/// Splits audio into `S` decimated sub-band streams.
pub fn pqmf_analyze(audio: &AudioBuffer, bank: &PqmfBank) -> Vec<Vec<f64>> {
    bank.analyze_samples(&audio.samples)
}

/// Recombines `S` sub-band streams into a full-band buffer `S` times longer.
pub fn pqmf_synthesize(streams: &[Vec<f64>], bank: &PqmfBank, sample_rate: u32) -> Result<AudioBuffer> {
    if streams.len() != bank.num_streams {
        return Err(Error::InvalidInput(format!(
            "bank has {} streams, got {}",
            bank.num_streams,
            streams.len()
        )));
    }
    let len = streams[0].len();
    if streams.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidInput("sub-band streams differ in length".into()));
    }
    AudioBuffer::new(bank.synthesize_samples(streams), sample_rate)
}
