//! Two-scale waveform discriminator.

use crate::error::{Error, Result};
use crate::nn::layers::conv1d;
use crate::nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};

use super::config::ModelConfig;

pub const SCALES: usize = 2;
/// Hidden activations returned per scale.
pub const LAYERS: usize = 5;

/// `(kernel, stride, padding)` of each hidden layer.
const GEOMETRY: [(usize, usize, usize); LAYERS] = [(15, 1, 7), (15, 4, 7), (15, 4, 7), (15, 4, 7), (5, 1, 2)];

pub struct DiscriminatorOutput {
    /// One `[B, 1, L_d]` score map per scale.
    pub scores: Vec<Var>,
    /// `SCALES * LAYERS` activations, scale-major.
    pub hidden: Vec<Var>,
}

fn widths(cfg: &ModelConfig) -> [usize; LAYERS + 1] {
    let [a, b, c, d] = cfg.disc_channels;
    [1, a, b, c, d, d]
}

pub fn register<R: Real>(b: &mut ParamBuilder<'_, R>, cfg: &ModelConfig) -> Result<()> {
    let w = widths(cfg);
    for s in 0..SCALES {
        for (l, &(k, _, _)) in GEOMETRY.iter().enumerate() {
            b.conv(&format!("disc.{s}.l{l}"), w[l], w[l + 1], k)?;
        }
        b.conv(&format!("disc.{s}.score"), w[LAYERS], 1, 3)?;
    }
    Ok(())
}

/// Score length of scale `s` for an `n`-sample input.
pub fn score_len(n: usize, s: usize) -> usize {
    let mut len = n >> s;
    for &(k, st, p) in &GEOMETRY {
        len = (len + 2 * p - k) / st + 1;
    }
    len
}

/// `x: [B, N]` waveform.
pub fn discriminate<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, cfg: &ModelConfig, x: Var) -> Result<DiscriminatorOutput> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 || s[1] < 64 {
        return Err(Error::Shape(format!("discriminator expects [B, N >= 64] audio, got {:?}", s)));
    }
    let mut input = g.reshape(x, &[s[0], 1, s[1]])?;
    let mut scores = Vec::with_capacity(SCALES);
    let mut hidden = Vec::with_capacity(SCALES * LAYERS);
    for sc in 0..SCALES {
        if sc > 0 {
            let pool = g.constant(Tensor::full(&[1, 1, 2], R::from_f64(0.5)));
            input = g.conv1d(input, pool, 2, 0, 1)?;
        }
        let mut h = input;
        for (l, &(_, st, p)) in GEOMETRY.iter().enumerate() {
            h = conv1d(g, store, &format!("disc.{sc}.l{l}"), h, st, p, 1)?;
            h = g.leaky_relu(h, cfg.leaky_slope)?;
            hidden.push(h);
        }
        scores.push(conv1d(g, store, &format!("disc.{sc}.score"), h, 1, 1, 1)?);
    }
    Ok(DiscriminatorOutput { scores, hidden })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_scales_with_documented_lengths() {
        let cfg = ModelConfig::default();
        let mut s = ParamStore::<f32>::new();
        register(&mut ParamBuilder::new(&mut s, ChaCha8Rng::seed_from_u64(0)), &cfg).unwrap();
        assert_eq!((score_len(16128, 0), score_len(16128, 1)), (252, 126));
        let x = standard_normal::<f32>(&[1, 16128], 1);
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let out = discriminate(&mut g, &s, &cfg, xv).unwrap();
            assert_eq!(out.hidden.len(), SCALES * LAYERS);
            let shapes: Vec<Vec<usize>> = out.scores.iter().map(|&v| g.shape(v).to_vec()).collect();
            assert_eq!(shapes, vec![vec![1, 1, 252], vec![1, 1, 126]]);
            out.scores.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
