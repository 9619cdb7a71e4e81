//! Waveform decoders: multi-stream iSTFT synthesis and a plain upsampling
//! baseline.
//!
//! The MS-iSTFT decoder upsamples latents by 8, predicts a 9-bin magnitude
//! and phase spectrum per sub-band stream, inverts each stream with a
//! 16-point overlap-add iSTFT and merges the streams with PQMF synthesis.
//! Both inverse transforms are fixed transposed convolutions, so the whole
//! decoder stays inside the autodiff graph.

use std::f64::consts::PI;

use crate::dsp::pqmf::PqmfBank;
use crate::dsp::stft::Window;
use crate::error::{Error, Result};
use crate::features::speaker::SPEAKER_DIM;
use crate::nn::layers::{conv1d, conv_transpose1d, linear};
use crate::nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};

use super::config::ModelConfig;
use super::encoders::broadcast_time;

/// Decoder selection for synthesis and benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    MsIstft,
    Baseline,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::MsIstft => "msistft",
            DecoderKind::Baseline => "baseline",
        }
    }
}

/// Output of [`decode_msistft`].
pub struct DecoderOutput {
    /// `[B, 128 T]`.
    pub waveform: Var,
    /// `[B, S * 9, 8 T]`, channel `s * 9 + k`.
    pub magnitudes: Var,
    /// Same layout as `magnitudes`, radians in `(-pi, pi]`.
    pub phases: Var,
}

impl DecoderOutput {
    /// Per-stream `frames x bins` matrices of batch item `b` for `v`, which
    /// is `magnitudes` or `phases`.
    pub fn per_stream<R: Real>(g: &Graph<R>, v: Var, b: usize, streams: usize) -> Vec<Vec<Vec<f64>>> {
        let s = g.shape(v);
        let (ch, frames) = (s[1], s[2]);
        let bins = ch / streams;
        let data = g.value(v).data();
        let base = b * ch * frames;
        (0..streams)
            .map(|st| {
                (0..frames)
                    .map(|t| {
                        (0..bins)
                            .map(|k| data[base + (st * bins + k) * frames + t].as_f64())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Fixed operators of the synthesis head, built once per configuration.
#[derive(Debug, Clone)]
pub struct SynthesisKernels {
    streams: usize,
    bins: usize,
    sub_n_fft: usize,
    sub_hop: usize,
    /// `[2 S bins, S, n_fft]` windowed inverse DFT, real parts first.
    istft: Vec<f64>,
    /// `[S, 1, order + 1]` PQMF synthesis taps.
    pqmf: Vec<f64>,
    pqmf_order: usize,
}

impl SynthesisKernels {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let bank = PqmfBank::default_bank();
        if bank.num_streams != cfg.streams {
            return Err(Error::InvalidConfig(format!(
                "PQMF bank has {} streams, model.streams is {}",
                bank.num_streams, cfg.streams
            )));
        }
        let (s, n) = (cfg.streams, cfg.sub_n_fft);
        let bins = cfg.sub_bins();
        let w = Window::Hann.coefficients(n);
        let mut istft = vec![0.0; 2 * s * bins * s * n];
        for st in 0..s {
            for k in 0..bins {
                let c = if k == 0 || 2 * k == n { 1.0 } else { 2.0 } / n as f64;
                for j in 0..n {
                    let ang = 2.0 * PI * (k * j) as f64 / n as f64;
                    let re_in = st * bins + k;
                    let im_in = s * bins + re_in;
                    istft[(re_in * s + st) * n + j] = c * ang.cos() * w[j];
                    istft[(im_in * s + st) * n + j] = -c * ang.sin() * w[j];
                }
            }
        }
        Ok(Self {
            streams: s,
            bins,
            sub_n_fft: n,
            sub_hop: cfg.sub_hop,
            istft,
            pqmf: bank.synthesis_kernel(),
            pqmf_order: bank.order,
        })
    }

    /// Reciprocal of the squared-window envelope over the `hop * frames`
    /// centered output samples.
    fn inverse_envelope(&self, frames: usize) -> Vec<f64> {
        let (n, hop) = (self.sub_n_fft, self.sub_hop);
        let w = Window::Hann.coefficients(n);
        let total = n + hop * (frames - 1);
        let mut env = vec![0.0; total];
        for t in 0..frames {
            for (j, wj) in w.iter().enumerate() {
                env[t * hop + j] += wj * wj;
            }
        }
        env[n / 2..n / 2 + hop * frames]
            .iter()
            .map(|&e| if e > 1e-11 { 1.0 / e } else { 0.0 })
            .collect()
    }
}

fn resblock<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, name: &str, x: Var, slope: f64) -> Result<Var> {
    let mut x = x;
    for (i, d) in [1usize, 3].into_iter().enumerate() {
        let h = g.leaky_relu(x, slope)?;
        let h = conv1d(g, store, &format!("{name}.c{i}"), h, 1, d, d)?;
        x = g.add(x, h)?;
    }
    Ok(x)
}

fn register_resblock<R: Real>(b: &mut ParamBuilder<'_, R>, name: &str, ch: usize) -> Result<()> {
    b.conv(&format!("{name}.c0"), ch, ch, 3)?;
    b.conv(&format!("{name}.c1"), ch, ch, 3)
}

/// Input conv plus the time-broadcast speaker projection.
fn decoder_input<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    prefix: &str,
    z: Var,
    speaker: Var,
    slope: f64,
) -> Result<Var> {
    let frames = g.shape(z)[2];
    let h = conv1d(g, store, &format!("{prefix}.pre"), z, 1, 3, 1)?;
    let spk = linear(g, store, &format!("{prefix}.spk"), speaker)?;
    let spk = broadcast_time(g, spk, frames)?;
    let h = g.add(h, spk)?;
    g.leaky_relu(h, slope)
}

pub fn register_msistft<R: Real>(b: &mut ParamBuilder<'_, R>, cfg: &ModelConfig) -> Result<()> {
    let [c0, c1, c2] = cfg.decoder_channels;
    b.conv("dec.pre", cfg.d_z, c0, 7)?;
    b.linear("dec.spk", SPEAKER_DIM, c0)?;
    b.conv_transpose("dec.up0", c0, c1, 8, 4)?;
    register_resblock(b, "dec.rb0", c1)?;
    b.conv_transpose("dec.up1", c1, c2, 4, 2)?;
    register_resblock(b, "dec.rb1", c2)?;
    b.conv("dec.post", c2, 3 * cfg.streams * cfg.sub_bins(), 7)
}

/// `z: [B, d_z, T]`, `speaker: [B, 256]`.
pub fn decode_msistft<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    cfg: &ModelConfig,
    kernels: &SynthesisKernels,
    z: Var,
    speaker: Var,
) -> Result<DecoderOutput> {
    let frames = g.shape(z)[2];
    let slope = cfg.leaky_slope;
    let h = decoder_input(g, store, "dec", z, speaker, slope)?;
    let h = conv_transpose1d(g, store, "dec.up0", h, 4, 2)?;
    let h = resblock(g, store, "dec.rb0", h, slope)?;
    let h = g.leaky_relu(h, slope)?;
    let h = conv_transpose1d(g, store, "dec.up1", h, 2, 1)?;
    let h = resblock(g, store, "dec.rb1", h, slope)?;
    let h = g.leaky_relu(h, slope)?;
    let raw = conv1d(g, store, "dec.post", h, 1, 3, 1)?;

    let sb = kernels.streams * kernels.bins;
    let raw_mag = g.slice(raw, 1, 0, sb)?;
    let pa = g.slice(raw, 1, sb, 2 * sb)?;
    let pb = g.slice(raw, 1, 2 * sb, 3 * sb)?;
    let magnitudes = g.exp(raw_mag)?;
    let phases = g.atan2(pb, pa)?;
    let cos = g.cos(phases)?;
    let sin = g.sin(phases)?;
    let re = g.mul(magnitudes, cos)?;
    let im = g.mul(magnitudes, sin)?;
    let spec = g.concat(&[re, im], 1)?;

    let sub_frames = 8 * frames;
    let istft_w = g.constant(Tensor::from_f64(
        &[2 * sb, kernels.streams, kernels.sub_n_fft],
        &kernels.istft,
    )?);
    let ola = g.conv_transpose1d(spec, istft_w, kernels.sub_hop, 0)?;
    let half = kernels.sub_n_fft / 2;
    let sub_len = kernels.sub_hop * sub_frames;
    let ola = g.slice(ola, 2, half, half + sub_len)?;
    let inv_env = g.constant(Tensor::from_f64(&[1, 1, sub_len], &kernels.inverse_envelope(sub_frames))?);
    let sub = g.mul(ola, inv_env)?;

    let pqmf_w = g.constant(Tensor::from_f64(
        &[kernels.streams, 1, kernels.pqmf_order + 1],
        &kernels.pqmf,
    )?);
    let full = g.conv_transpose1d(sub, pqmf_w, kernels.streams, 0)?;
    let offset = kernels.pqmf_order - kernels.pqmf_order / 2;
    let len = kernels.streams * sub_len;
    let full = g.slice(full, 2, offset, offset + len)?;
    let batch = g.shape(full)[0];
    let waveform = g.reshape(full, &[batch, len])?;
    Ok(DecoderOutput {
        waveform,
        magnitudes,
        phases,
    })
}

/// Upsampling factors of the baseline decoder.
pub const BASELINE_FACTORS: [usize; 4] = [8, 4, 2, 2];

fn baseline_widths(width: usize) -> [usize; 5] {
    [width, width / 2, width / 4, width / 8, width / 16]
}

pub fn register_baseline<R: Real>(b: &mut ParamBuilder<'_, R>, cfg: &ModelConfig, width: usize) -> Result<()> {
    if width < 16 || !width.is_multiple_of(16) {
        return Err(Error::InvalidConfig(format!(
            "baseline width must be a positive multiple of 16, got {width}"
        )));
    }
    let w = baseline_widths(width);
    b.conv("base.pre", cfg.d_z, w[0], 7)?;
    b.linear("base.spk", SPEAKER_DIM, w[0])?;
    for (i, &f) in BASELINE_FACTORS.iter().enumerate() {
        b.conv_transpose(&format!("base.up{i}"), w[i], w[i + 1], 2 * f, f)?;
        register_resblock(b, &format!("base.rb{i}"), w[i + 1])?;
    }
    b.conv("base.post", w[4], 1, 7)
}

/// Parameter count of the baseline at `width`, without allocating it.
pub fn baseline_param_count(cfg: &ModelConfig, width: usize) -> usize {
    let w = baseline_widths(width);
    let conv = |i: usize, o: usize, k: usize| i * o * k + o;
    let mut n = conv(cfg.d_z, w[0], 7) + SPEAKER_DIM * w[0] + w[0];
    for (i, &f) in BASELINE_FACTORS.iter().enumerate() {
        n += w[i] * w[i + 1] * 2 * f + w[i + 1];
        n += 2 * conv(w[i + 1], w[i + 1], 3);
    }
    n + conv(w[4], 1, 7)
}

/// Parameter count of the MS-iSTFT decoder.
pub fn msistft_param_count(cfg: &ModelConfig) -> usize {
    let [c0, c1, c2] = cfg.decoder_channels;
    let conv = |i: usize, o: usize, k: usize| i * o * k + o;
    conv(cfg.d_z, c0, 7)
        + SPEAKER_DIM * c0
        + c0
        + conv(c0, c1, 8)
        + 2 * conv(c1, c1, 3)
        + conv(c1, c2, 4)
        + 2 * conv(c2, c2, 3)
        + conv(c2, 3 * cfg.streams * cfg.sub_bins(), 7)
}

/// The configured baseline width, or the multiple of 16 whose parameter
/// count is closest to the MS-iSTFT decoder's.
pub fn baseline_width(cfg: &ModelConfig) -> usize {
    if cfg.baseline_width != 0 {
        return cfg.baseline_width;
    }
    let target = msistft_param_count(cfg) as i64;
    (1..=256)
        .map(|m| 16 * m)
        .min_by_key(|&w| (baseline_param_count(cfg, w) as i64 - target).abs())
        .unwrap_or(16)
}

/// `z: [B, d_z, T]`, `speaker: [B, 256]` to a `[B, 128 T]` waveform.
pub fn decode_baseline<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    cfg: &ModelConfig,
    z: Var,
    speaker: Var,
) -> Result<Var> {
    let slope = cfg.leaky_slope;
    let mut h = decoder_input(g, store, "base", z, speaker, slope)?;
    for (i, &f) in BASELINE_FACTORS.iter().enumerate() {
        h = conv_transpose1d(g, store, &format!("base.up{i}"), h, f, f / 2)?;
        h = resblock(g, store, &format!("base.rb{i}"), h, slope)?;
        h = g.leaky_relu(h, slope)?;
    }
    let y = conv1d(g, store, "base.post", h, 1, 3, 1)?;
    let y = g.tanh(y)?;
    let s = g.shape(y).to_vec();
    g.reshape(y, &[s[0], s[2]])
}
