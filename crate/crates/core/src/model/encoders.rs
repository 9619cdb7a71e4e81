//! Posterior and prior networks with in-graph condition assembly.

use crate::error::{Error, Result};
use crate::features::conditions::ConditionBlock;
use crate::features::f0::{F0_BINS, F0_EMBED_DIM};
use crate::features::speaker::{register_speaker_params, speaker_head};
use crate::nn::layers::conv1d;
use crate::nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};

use super::config::ModelConfig;
use super::wavenet;

/// Diagonal Gaussian over `[B, d_z, T]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub log_sigma: Var,
}

pub fn register<R: Real>(b: &mut ParamBuilder<'_, R>, cfg: &ModelConfig) -> Result<()> {
    let h = cfg.hidden;
    b.conv("post.pre", cfg.spec_bins, h, 1)?;
    wavenet::register(b, "post.wn", h, cfg.posterior_layers, cfg.kernel, None)?;
    b.conv("post.proj", h, 2 * cfg.d_z, 1)?;

    b.conv("content.prenet", cfg.content_source_dim, ConditionBlock::Content.dim(), 1)?;
    register_speaker_params(b, cfg.speaker_stats_dim)?;
    b.normal("f0.table", &[F0_BINS + 1, F0_EMBED_DIM], 1.0)?;

    b.conv("prior.pre", cfg.cond_dim, h, 1)?;
    for i in 0..cfg.prior_layers {
        b.conv(&format!("prior.conv{i}"), h, h, cfg.kernel)?;
    }
    b.conv("prior.proj", h, 2 * cfg.d_z, 1)
}

fn split_gaussian<R: Real>(g: &mut Graph<R>, cfg: &ModelConfig, stats: Var) -> Result<GaussianVars> {
    let mu = g.slice(stats, 1, 0, cfg.d_z)?;
    let ls = g.slice(stats, 1, cfg.d_z, 2 * cfg.d_z)?;
    let log_sigma = g.clamp(ls, cfg.log_sigma_min, cfg.log_sigma_max)?;
    Ok(GaussianVars { mu, log_sigma })
}

/// `x_lin: [B, 257, T]` magnitudes to `q(z | x_lin)`.
pub fn posterior_encode<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, cfg: &ModelConfig, x_lin: Var) -> Result<GaussianVars> {
    let s = g.shape(x_lin);
    if s.len() != 3 || s[1] != cfg.spec_bins {
        return Err(Error::Shape(format!(
            "posterior expects [B, {}, T] spectrogram magnitudes, got {:?}",
            cfg.spec_bins, s
        )));
    }
    let h = conv1d(g, store, "post.pre", x_lin, 1, 0, 1)?;
    let h = wavenet::forward(g, store, "post.wn", h, None, cfg.posterior_layers)?;
    let stats = conv1d(g, store, "post.proj", h, 1, 0, 1)?;
    split_gaussian(g, cfg, stats)
}

/// `c: [B, 768, T]` to `(mu_theta(c), log sigma_theta(c))`.
pub fn prior_encode<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, cfg: &ModelConfig, c: Var) -> Result<GaussianVars> {
    let mut h = conv1d(g, store, "prior.pre", c, 1, 0, 1)?;
    for i in 0..cfg.prior_layers {
        let y = conv1d(g, store, &format!("prior.conv{i}"), h, 1, cfg.kernel / 2, 1)?;
        let y = g.leaky_relu(y, cfg.leaky_slope)?;
        h = g.layer_norm(y, 1e-5)?;
    }
    let stats = conv1d(g, store, "prior.proj", h, 1, 0, 1)?;
    split_gaussian(g, cfg, stats)
}

/// `z = mu + exp(log_sigma) * eps`.
pub fn reparameterize<R: Real>(g: &mut Graph<R>, q: &GaussianVars, eps: Var) -> Result<Var> {
    let sigma = g.exp(q.log_sigma)?;
    let n = g.mul(sigma, eps)?;
    g.add(q.mu, n)
}

/// Repeats `[B, D]` over `frames` as `[B, D, frames]`.
pub fn broadcast_time<R: Real>(g: &mut Graph<R>, v: Var, frames: usize) -> Result<Var> {
    let s = g.shape(v).to_vec();
    let v = g.reshape(v, &[s[0], s[1], 1])?;
    let zeros = g.constant(Tensor::zeros(&[1, 1, frames]));
    g.add(v, zeros)
}

/// Raw per-utterance inputs of the condition tensor, batched.
pub struct ConditionInputs<R> {
    /// `[B, 1024, T]`.
    pub content: Tensor<R>,
    /// `[B, 160]` pooled mel stats.
    pub speaker_stats: Tensor<R>,
    /// `[B, 256]`.
    pub emotion: Tensor<R>,
    /// `B * T` F0 table rows.
    pub f0_rows: Vec<usize>,
}

/// Speaker embeddings `[B, 256]` from pooled stats.
pub fn speaker_embedding<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, stats: &Tensor<R>) -> Result<Var> {
    let x = g.constant(stats.clone());
    speaker_head(g, store, x)
}

/// `c = [content, speaker, emotion, f0]` as `[B, 768, T]`.
pub fn assemble<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    inputs: &ConditionInputs<R>,
    speaker: Var,
) -> Result<Var> {
    let cs = inputs.content.shape();
    let (batch, frames) = (cs[0], cs[2]);
    if inputs.f0_rows.len() != batch * frames {
        return Err(Error::FeatureAlignment(format!(
            "content covers {} frames, f0 covers {}",
            batch * frames,
            inputs.f0_rows.len()
        )));
    }
    let content = g.constant(inputs.content.clone());
    let content = conv1d(g, store, "content.prenet", content, 1, 0, 1)?;
    let speaker = broadcast_time(g, speaker, frames)?;
    let emotion = g.constant(inputs.emotion.clone());
    let emotion = broadcast_time(g, emotion, frames)?;
    let table = g.param(store, "f0.table")?;
    let f0 = g.gather(table, &inputs.f0_rows)?;
    let f0 = g.reshape(f0, &[batch, frames, F0_EMBED_DIM])?;
    let f0 = g.permute(f0, &[0, 2, 1])?;
    g.concat(&[content, speaker, emotion, f0], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn posterior_store(cfg: &ModelConfig) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let mut b = ParamBuilder::new(&mut s, ChaCha8Rng::seed_from_u64(5));
        b.conv("post.pre", cfg.spec_bins, cfg.hidden, 1).unwrap();
        wavenet::register(&mut b, "post.wn", cfg.hidden, cfg.posterior_layers, cfg.kernel, None).unwrap();
        b.conv("post.proj", cfg.hidden, 2 * cfg.d_z, 1).unwrap();
        s
    }

    #[test]
    fn posterior_shapes_clamp_and_determinism() {
        let cfg = ModelConfig::default();
        let s = posterior_store(&cfg);
        let x = standard_normal::<f32>(&[1, 257, 126], 1);
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let q = posterior_encode(&mut g, &s, &cfg, xv).unwrap();
            assert_eq!(g.shape(q.mu), &[1, 192, 126]);
            assert_eq!(g.shape(q.log_sigma), &[1, 192, 126]);
            (g.value(q.mu).clone(), g.value(q.log_sigma).clone())
        };
        let (mu, ls) = run();
        assert!(ls.data().iter().all(|&v| (-9.0..=2.0).contains(&v)));
        assert_eq!((mu, ls), run());
    }

    #[test]
    fn posterior_rejects_wrong_bin_count() {
        let cfg = ModelConfig::default();
        let s = posterior_store(&cfg);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 256, 4]));
        assert!(matches!(posterior_encode(&mut g, &s, &cfg, x), Err(Error::Shape(_))));
    }

    #[test]
    fn reparameterize_with_tiny_sigma_returns_the_mean() {
        let mut g = Graph::<f64>::new();
        let mu_t = standard_normal(&[1, 4, 5], 2);
        let q = GaussianVars {
            mu: g.constant(mu_t.clone()),
            log_sigma: g.constant(Tensor::full(&[1, 4, 5], -9.0)),
        };
        let eps_t = standard_normal(&[1, 4, 5], 3);
        let eps = g.constant(eps_t.clone());
        let z = reparameterize(&mut g, &q, eps).unwrap();
        for ((z, m), e) in g.value(z).data().iter().zip(mu_t.data()).zip(eps_t.data()) {
            assert!((z - m).abs() <= 1.3e-4 * e.abs() + 1e-15);
        }
        assert_eq!(standard_normal::<f64>(&[3], 9), standard_normal::<f64>(&[3], 9));
    }

    #[test]
    fn reparameterized_sample_mean_converges() {
        let n = 100_000;
        let (mu, sigma) = (0.75f64, 1.6f64);
        let mut g = Graph::<f64>::new();
        let q = GaussianVars {
            mu: g.constant(Tensor::full(&[1, 1, n], mu)),
            log_sigma: g.constant(Tensor::full(&[1, 1, n], sigma.ln())),
        };
        let eps = g.constant(standard_normal(&[1, 1, n], 11));
        let z = reparameterize(&mut g, &q, eps).unwrap();
        let mean = g.value(z).data().iter().sum::<f64>() / n as f64;
        assert!((mean - mu).abs() <= 3.0 * sigma / (n as f64).sqrt());
    }
}
