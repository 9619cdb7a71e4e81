//! Stats-pooling speaker embedder.
//!
//! Per-band mean and standard deviation of the log-mel over time form a
//! 160-dim vector, which a trainable affine map takes to 256 dims before L2
//! normalization. Values are sorted before summation, so the pooled stats
//! do not depend on frame order at all.

use crate::dsp::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::layers::linear;
use crate::nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};

pub const SPEAKER_DIM: usize = 256;
pub const MIN_SPEAKER_FRAMES: usize = 8;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    values: Vec<f64>,
}

impl SpeakerEmbedding {
    /// Normalizes `values` to unit length.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidInput("speaker embedding has zero or non-finite norm".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Sum in ascending order, so any permutation gives the same bits.
fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// `[mean_0..mean_B, std_0..std_B]` over frames.
pub fn mel_stats(mel: &MelSpectrogram) -> Result<Vec<f64>> {
    if mel.frames < MIN_SPEAKER_FRAMES {
        return Err(Error::InvalidInput(format!(
            "speaker embedding needs at least {MIN_SPEAKER_FRAMES} frames, got {}",
            mel.frames
        )));
    }
    let n = mel.frames as f64;
    let mut means = Vec::with_capacity(mel.mel_bands);
    let mut stds = Vec::with_capacity(mel.mel_bands);
    for b in 0..mel.mel_bands {
        let col: Vec<f64> = (0..mel.frames).map(|t| mel.get(t, b)).collect();
        let mean = sorted_sum(col.clone()) / n;
        let var = sorted_sum(col.iter().map(|v| (v - mean).powi(2)).collect()) / n;
        means.push(mean);
        stds.push(var.sqrt());
    }
    means.extend(stds);
    Ok(means)
}

pub fn register_speaker_params<R: Real>(b: &mut ParamBuilder<'_, R>, stats_dim: usize) -> Result<()> {
    b.linear("speaker.proj", stats_dim, SPEAKER_DIM)
}

/// `[N, stats] -> [N, 256]` unit rows.
pub fn speaker_head<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, stats: Var) -> Result<Var> {
    let e = linear(g, store, "speaker.proj", stats)?;
    let sq = g.square(e)?;
    let ss = g.sum_axis(sq, 1)?;
    let ss = g.add_scalar(ss, NORM_EPS)?;
    let norm = g.sqrt(ss)?;
    g.div(e, norm)
}

/// Embeds one utterance outside any training graph.
pub fn embed_speaker<R: Real>(mel: &MelSpectrogram, store: &ParamStore<R>) -> Result<SpeakerEmbedding> {
    let stats = mel_stats(mel)?;
    let mut g = Graph::<R>::new();
    let x = g.constant(Tensor::from_f64(&[1, stats.len()], &stats)?);
    let e = speaker_head(&mut g, store, x)?;
    SpeakerEmbedding::new(g.value(e).to_f64_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel::mel_spectrogram;
    use crate::dsp::stft::StftConfig;
    use crate::dsp::AudioBuffer;
    use rand::SeedableRng;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let mut b = ParamBuilder::new(&mut s, rand_chacha::ChaCha8Rng::seed_from_u64(1));
        register_speaker_params(&mut b, 160).unwrap();
        s
    }

    fn mel() -> MelSpectrogram {
        let x = (0..8000)
            .map(|i| (i as f64 * 0.07).sin() * 0.2 + (i as f64 * 0.31).sin() * 0.1 * (i as f64 / 8000.0))
            .collect();
        mel_spectrogram(&AudioBuffer::new(x, 16000).unwrap(), &StftConfig::default(), 80).unwrap()
    }

    #[test]
    fn unit_norm_and_order_invariant() {
        let s = store();
        let m = mel();
        let a = embed_speaker(&m, &s).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_eq!(a.values().len(), 256);
        assert_eq!(embed_speaker(&m.reversed(), &s).unwrap(), a);
    }

    #[test]
    fn too_few_frames_rejected() {
        let m = MelSpectrogram {
            frames: 7,
            mel_bands: 80,
            values: vec![0.0; 560],
        };
        assert!(matches!(mel_stats(&m), Err(Error::InvalidInput(_))));
    }
}
