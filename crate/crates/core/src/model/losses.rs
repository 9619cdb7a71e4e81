//! Training objectives: mel reconstruction, KL through the flow,
//! least-squares adversarial terms and feature matching.

use std::f64::consts::PI;

use crate::dsp::mel::{MelFilterbank, MEL_FLOOR};
use crate::dsp::stft::Window;
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};

use super::config::ModelConfig;
use super::encoders::GaussianVars;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Windowed DFT and mel filterbank as convolution kernels.
#[derive(Debug, Clone)]
pub struct MelKernels {
    n_fft: usize,
    hop: usize,
    bins: usize,
    bands: usize,
    /// `[2 bins, 1, n_fft]`, cosine rows then negative sine rows.
    dft: Vec<f64>,
    /// `[bands, bins, 1]`.
    filterbank: Vec<f64>,
}

impl MelKernels {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let (n, bins) = (cfg.n_fft, cfg.spec_bins);
        let w = Window::Hann.coefficients(n);
        let mut dft = vec![0.0; 2 * bins * n];
        for k in 0..bins {
            for j in 0..n {
                let ang = 2.0 * PI * (k * j) as f64 / n as f64;
                dft[k * n + j] = ang.cos() * w[j];
                dft[(bins + k) * n + j] = -ang.sin() * w[j];
            }
        }
        let bank = MelFilterbank::new(cfg.mel_bands, n, SAMPLE_RATE)?;
        Ok(Self {
            n_fft: n,
            hop: cfg.hop_length,
            bins,
            bands: cfg.mel_bands,
            dft,
            filterbank: bank.weights,
        })
    }

    /// Log-mel `[B, bands, N / hop + 1]` of a `[B, N]` waveform, matching
    /// the centered reflect-padded analysis of the dsp module.
    pub fn log_mel<R: Real>(&self, g: &mut Graph<R>, audio: Var) -> Result<Var> {
        let s = g.shape(audio).to_vec();
        if s.len() != 2 || s[1] <= self.n_fft / 2 {
            return Err(Error::Shape(format!(
                "log-mel expects [B, N > {}] audio, got {:?}",
                self.n_fft / 2,
                s
            )));
        }
        let x = g.reshape(audio, &[s[0], 1, s[1]])?;
        let x = g.reflect_pad(x, self.n_fft / 2, self.n_fft / 2)?;
        let dft = g.constant(Tensor::from_f64(&[2 * self.bins, 1, self.n_fft], &self.dft)?);
        let spec = g.conv1d(x, dft, self.hop, 0, 1)?;
        let re = g.slice(spec, 1, 0, self.bins)?;
        let im = g.slice(spec, 1, self.bins, 2 * self.bins)?;
        let re2 = g.square(re)?;
        let im2 = g.square(im)?;
        let power = g.add(re2, im2)?;
        let power = g.add_scalar(power, 1e-9)?;
        let mag = g.sqrt(power)?;
        let fb = g.constant(Tensor::from_f64(&[self.bands, self.bins, 1], &self.filterbank)?);
        let mel = g.conv1d(mag, fb, 1, 0, 1)?;
        let mel = g.clamp(mel, MEL_FLOOR, 1e30)?;
        g.log(mel)
    }
}

/// `sum log N(x; mu, sigma)` over every element.
pub fn gaussian_logprob<R: Real>(g: &mut Graph<R>, x: Var, p: &GaussianVars) -> Result<Var> {
    let n = g.value(x).numel() as f64;
    let d = g.sub(x, p.mu)?;
    let neg = g.neg(p.log_sigma)?;
    let inv = g.exp(neg)?;
    let u = g.mul(d, inv)?;
    let u2 = g.square(u)?;
    let u2 = g.scale(u2, -0.5)?;
    let e = g.sub(u2, p.log_sigma)?;
    let s = g.sum(e)?;
    g.add_scalar(s, -0.5 * LOG_2PI * n)
}

/// `log N(z_p; mu_p, sigma_p) + logdet`, summed.
pub fn prior_logprob<R: Real>(g: &mut Graph<R>, z_p: Var, prior: &GaussianVars, logdet: Var) -> Result<Var> {
    let lp = gaussian_logprob(g, z_p, prior)?;
    g.add(lp, logdet)
}

/// Single-sample `(log q(z) - log p(z)) / (B d_z T)`.
pub fn kl_loss<R: Real>(
    g: &mut Graph<R>,
    q: &GaussianVars,
    z: Var,
    z_p: Var,
    prior: &GaussianVars,
    logdet: Var,
) -> Result<Var> {
    let n = g.value(z).numel() as f64;
    let lq = gaussian_logprob(g, z, q)?;
    let lp = prior_logprob(g, z_p, prior, logdet)?;
    let d = g.sub(lq, lp)?;
    g.scale(d, 1.0 / n)
}

fn check_same<R: Real>(g: &Graph<R>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// `mean |mel_a - mel_b|`.
pub fn recon_loss<R: Real>(g: &mut Graph<R>, mel_a: Var, mel_b: Var) -> Result<Var> {
    check_same(g, mel_a, mel_b, "reconstruction loss")?;
    let d = g.sub(mel_a, mel_b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

fn mean_sq_offset<R: Real>(g: &mut Graph<R>, x: Var, target: f64) -> Result<Var> {
    let d = g.add_scalar(x, -target)?;
    let d = g.square(d)?;
    g.mean(d)
}

fn sum_vars<R: Real>(g: &mut Graph<R>, vs: &[Var]) -> Result<Var> {
    let mut acc = vs[0];
    for &v in &vs[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

/// `sum_d mean (D(G(z)) - 1)^2`.
pub fn adversarial_loss<R: Real>(g: &mut Graph<R>, fake_scores: &[Var]) -> Result<Var> {
    let terms = fake_scores
        .iter()
        .map(|&s| mean_sq_offset(g, s, 1.0))
        .collect::<Result<Vec<_>>>()?;
    sum_vars(g, &terms)
}

/// `sum_d [mean (D(x) - 1)^2 + mean D(G(z))^2]`.
pub fn discriminator_loss<R: Real>(g: &mut Graph<R>, real_scores: &[Var], fake_scores: &[Var]) -> Result<Var> {
    if real_scores.len() != fake_scores.len() {
        return Err(Error::Shape("discriminator loss: score list lengths differ".into()));
    }
    let mut terms = Vec::with_capacity(2 * real_scores.len());
    for (&r, &f) in real_scores.iter().zip(fake_scores) {
        check_same(g, r, f, "discriminator loss")?;
        terms.push(mean_sq_offset(g, r, 1.0)?);
        terms.push(mean_sq_offset(g, f, 0.0)?);
    }
    sum_vars(g, &terms)
}

/// `sum_layers mean |h_real - h_fake|`.
pub fn feature_matching_loss<R: Real>(g: &mut Graph<R>, real_hidden: &[Var], fake_hidden: &[Var]) -> Result<Var> {
    if real_hidden.len() != fake_hidden.len() || real_hidden.is_empty() {
        return Err(Error::Shape("feature matching: hidden list lengths differ".into()));
    }
    let terms = real_hidden
        .iter()
        .zip(fake_hidden)
        .map(|(&r, &f)| {
            check_same(g, r, f, "feature matching")?;
            recon_loss(g, r, f)
        })
        .collect::<Result<Vec<_>>>()?;
    sum_vars(g, &terms)
}

/// Generator objective and its parts, as graph scalars.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLosses {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub adv: Var,
    pub fm: Var,
}

/// `L_total = lambda_mel L_recon + L_kl + L_adv + lambda_fm L_fm`.
pub fn total_loss<R: Real>(g: &mut Graph<R>, cfg: &ModelConfig, recon: Var, kl: Var, adv: Var, fm: Var) -> Result<GeneratorLosses> {
    let r = g.scale(recon, cfg.lambda_mel)?;
    let f = g.scale(fm, cfg.lambda_fm)?;
    let total = sum_vars(g, &[r, kl, adv, f])?;
    Ok(GeneratorLosses {
        total,
        recon,
        kl,
        adv,
        fm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel::mel_spectrogram;
    use crate::dsp::stft::StftConfig;
    use crate::dsp::AudioBuffer;
    use crate::model::standard_normal;

    fn gaussian(g: &mut Graph<f64>, mu: &[f64], ls: &[f64]) -> GaussianVars {
        let shape = [1, 1, mu.len()];
        GaussianVars {
            mu: g.constant(Tensor::from_f64(&shape, mu).unwrap()),
            log_sigma: g.constant(Tensor::from_f64(&shape, ls).unwrap()),
        }
    }

    fn scalar(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn prior_logprob_at_standard_normal_mode() {
        let mut g = Graph::new();
        let p = gaussian(&mut g, &[0.0; 6], &[0.0; 6]);
        let z = g.constant(Tensor::zeros(&[1, 1, 6]));
        let zero = g.constant(Tensor::scalar(0.0));
        let lp = prior_logprob(&mut g, z, &p, zero).unwrap();
        assert!((scalar(&g, lp) + 3.0 * LOG_2PI).abs() < 1e-12);

        let p1 = gaussian(&mut g, &[1.0], &[0.0]);
        let z1 = g.constant(Tensor::zeros(&[1, 1, 1]));
        let lp1 = prior_logprob(&mut g, z1, &p1, zero).unwrap();
        assert!((scalar(&g, lp1) - (-0.5 * LOG_2PI - 0.5)).abs() < 1e-12);
        assert!((scalar(&g, lp1) + 1.4189).abs() < 1e-4);
    }

    #[test]
    fn kl_is_zero_for_matched_distributions_at_the_mode() {
        let mut g = Graph::new();
        let mu = [0.3, -1.2, 2.0];
        let ls = [-0.5, 0.1, 0.7];
        let q = gaussian(&mut g, &mu, &ls);
        let p = gaussian(&mut g, &mu, &ls);
        let zero = g.constant(Tensor::scalar(0.0));
        let kl = kl_loss(&mut g, &q, q.mu, q.mu, &p, zero).unwrap();
        assert_eq!(scalar(&g, kl), 0.0);
    }

    #[test]
    fn kl_single_element_shifted_gaussian() {
        let mut g = Graph::new();
        let q = gaussian(&mut g, &[0.0], &[0.0]);
        let p = gaussian(&mut g, &[1.0], &[0.0]);
        let z = g.constant(Tensor::zeros(&[1, 1, 1]));
        let zero = g.constant(Tensor::scalar(0.0));
        let kl = kl_loss(&mut g, &q, z, z, &p, zero).unwrap();
        assert!((scalar(&g, kl) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_kl_matches_closed_form() {
        let n = 100_000;
        let (mq, sq, mp, sp) = (0.4f64, 0.7f64, -0.3f64, 1.3f64);
        let mut g = Graph::new();
        let q = gaussian(&mut g, &vec![mq; n], &vec![sq.ln(); n]);
        let p = gaussian(&mut g, &vec![mp; n], &vec![sp.ln(); n]);
        let eps = g.constant(standard_normal(&[1, 1, n], 42));
        let z = crate::model::encoders::reparameterize(&mut g, &q, eps).unwrap();
        let zero = g.constant(Tensor::scalar(0.0));
        let kl = kl_loss(&mut g, &q, z, z, &p, zero).unwrap();
        let kl = scalar(&g, kl);
        let closed = (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
        assert!((kl - closed).abs() <= 0.02 * closed, "mc {kl} vs closed {closed}");
    }

    #[test]
    fn graph_log_mel_matches_dsp_mel() {
        let cfg = ModelConfig::default();
        let k = MelKernels::new(&cfg).unwrap();
        let x = standard_normal::<f64>(&[1, 4096], 7);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mel = k.log_mel(&mut g, xv).unwrap();
        let reference = mel_spectrogram(
            &AudioBuffer::new(x.to_f64_vec(), SAMPLE_RATE).unwrap(),
            &StftConfig::default(),
            cfg.mel_bands,
        )
        .unwrap();
        let shape = g.shape(mel).to_vec();
        assert_eq!(shape, vec![1, 80, reference.frames]);
        let v = g.value(mel).data();
        for t in 0..reference.frames {
            for b in 0..80 {
                assert!((v[b * shape[2] + t] - reference.get(t, b)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reconstruction_and_gan_identities() {
        let cfg = ModelConfig::default();
        let k = MelKernels::new(&cfg).unwrap();
        let mut g = Graph::new();
        let a = g.constant(standard_normal(&[2, 2048], 1));
        let m1 = k.log_mel(&mut g, a).unwrap();
        let m2 = k.log_mel(&mut g, a).unwrap();
        let r = recon_loss(&mut g, m1, m2).unwrap();
        assert_eq!(scalar(&g, r), 0.0);

        let ones = g.constant(Tensor::full(&[2, 1, 9], 1.0));
        let adv = adversarial_loss(&mut g, &[ones, ones]).unwrap();
        assert_eq!(scalar(&g, adv), 0.0);

        let h = [g.constant(standard_normal(&[2, 4, 9], 2)), g.constant(standard_normal(&[2, 8, 3], 3))];
        let fm = feature_matching_loss(&mut g, &h, &h).unwrap();
        assert_eq!(scalar(&g, fm), 0.0);

        let d = g.constant(standard_normal(&[2, 1, 9], 4));
        let disc = discriminator_loss(&mut g, &[d], &[d]).unwrap();
        let disc = scalar(&g, disc);
        let vals = g.value(d).data().to_vec();
        let expect = vals.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / 18.0 + vals.iter().map(|v| v * v).sum::<f64>() / 18.0;
        assert!((disc - expect).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_shape_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[1, 80, 10]));
        let b = g.constant(Tensor::zeros(&[1, 80, 11]));
        assert!(matches!(recon_loss(&mut g, a, b), Err(Error::Shape(_))));
    }
}
