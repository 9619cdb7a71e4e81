//! The generative model: posterior encoder, conditional flow, prior network,
//! waveform decoders, discriminator and losses.

pub mod config;
pub mod decoder;
pub mod discriminator;
pub mod encoders;
pub mod flow;
pub mod losses;
pub mod wavenet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::nn::{Graph, ParamBuilder, ParamStore, Real, Tensor, Var};

pub use config::ModelConfig;
pub use decoder::{DecoderKind, DecoderOutput, SynthesisKernels};
pub use encoders::{ConditionInputs, GaussianVars};
pub use flow::{FlowConfig, FlowOutput};
pub use losses::MelKernels;

/// Seed stream offsets so parameter groups are independent of each other.
const BASELINE_SEED_OFFSET: u64 = 0x5eed_ba5e;

/// Parameters plus the fixed synthesis and analysis operators.
#[derive(Debug, Clone)]
pub struct Model<R> {
    pub cfg: ModelConfig,
    pub store: ParamStore<R>,
    pub synth: SynthesisKernels,
    pub mel: MelKernels,
}

/// Everything the generator graph produces for one training batch.
pub struct TrainForward {
    pub q: GaussianVars,
    pub z: Var,
    pub flow: FlowOutput,
    pub prior: GaussianVars,
    pub speaker: Var,
    pub cond: Var,
    pub decoded: DecoderOutput,
}

/// `ε ~ N(0, 1)` of the given shape from a seeded generator.
pub fn standard_normal<R: Real>(shape: &[usize], seed: u64) -> Tensor<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        R::from_f64(v)
    })
}

impl<R: Real> Model<R> {
    /// Fresh parameters for every generator and discriminator component.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        {
            let mut b = ParamBuilder::new(&mut store, ChaCha8Rng::seed_from_u64(seed));
            encoders::register(&mut b, &cfg)?;
            flow::register(&mut b, &cfg.flow())?;
            decoder::register_msistft(&mut b, &cfg)?;
            discriminator::register(&mut b, &cfg)?;
        }
        Self::from_store(cfg, store)
    }

    /// Wraps an existing store, e.g. one loaded from a checkpoint.
    pub fn from_store(cfg: ModelConfig, store: ParamStore<R>) -> Result<Self> {
        cfg.validate()?;
        let synth = SynthesisKernels::new(&cfg)?;
        let mel = MelKernels::new(&cfg)?;
        Ok(Self { cfg, store, synth, mel })
    }

    /// A separate store with the baseline decoder at its matched width.
    pub fn baseline_store(&self, seed: u64) -> Result<ParamStore<R>> {
        let mut store = ParamStore::new();
        let width = decoder::baseline_width(&self.cfg);
        let mut b = ParamBuilder::new(&mut store, ChaCha8Rng::seed_from_u64(seed ^ BASELINE_SEED_OFFSET));
        decoder::register_baseline(&mut b, &self.cfg, width)?;
        Ok(store)
    }

    pub fn cast<S: Real>(&self) -> Model<S> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            synth: self.synth.clone(),
            mel: self.mel.clone(),
        }
    }

    /// Generator forward pass on aligned training crops: `x_lin` is
    /// `[B, 257, W]`, `eps` is `[B, d_z, W]`.
    pub fn forward_train(
        &self,
        g: &mut Graph<R>,
        x_lin: &Tensor<R>,
        cond: &ConditionInputs<R>,
        eps: &Tensor<R>,
    ) -> Result<TrainForward> {
        let x = g.constant(x_lin.clone());
        let q = encoders::posterior_encode(g, &self.store, &self.cfg, x)?;
        let eps = g.constant(eps.clone());
        let z = encoders::reparameterize(g, &q, eps)?;
        let speaker = encoders::speaker_embedding(g, &self.store, &cond.speaker_stats)?;
        let c = encoders::assemble(g, &self.store, cond, speaker)?;
        let flow = flow::flow_forward(g, &self.store, &self.cfg.flow(), z, c)?;
        let prior = encoders::prior_encode(g, &self.store, &self.cfg, c)?;
        let decoded = decoder::decode_msistft(g, &self.store, &self.cfg, &self.synth, z, speaker)?;
        Ok(TrainForward {
            q,
            z,
            flow,
            prior,
            speaker,
            cond: c,
            decoded,
        })
    }

    /// Samples `z_p ~ N(mu(c), (noise_scale sigma(c))^2)`, inverts the flow and
    /// decodes with the MS-iSTFT head. Returns batch item 0's waveform.
    pub fn synthesize(&self, cond: &ConditionInputs<R>, noise_scale: f64, seed: u64) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let speaker = encoders::speaker_embedding(&mut g, &self.store, &cond.speaker_stats)?;
        let c = encoders::assemble(&mut g, &self.store, cond, speaker)?;
        let prior = encoders::prior_encode(&mut g, &self.store, &self.cfg, c)?;
        let shape = g.shape(prior.mu).to_vec();
        let eps = g.constant(standard_normal(&shape, seed));
        let eps = g.scale(eps, noise_scale)?;
        let z_p = encoders::reparameterize(&mut g, &prior, eps)?;
        let z = flow::flow_inverse(&mut g, &self.store, &self.cfg.flow(), z_p, c)?;
        let out = decoder::decode_msistft(&mut g, &self.store, &self.cfg, &self.synth, z, speaker)?;
        let n = g.shape(out.waveform)[1];
        Ok(g.value(out.waveform).data()[..n].iter().map(|v| v.as_f64()).collect())
    }

    /// Decodes `z: [1, d_z, T]` with the chosen head, for timing.
    pub fn decode_only(
        &self,
        kind: DecoderKind,
        baseline: Option<&ParamStore<R>>,
        z: &Tensor<R>,
        speaker: &Tensor<R>,
    ) -> Result<Vec<R>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let spk = g.constant(speaker.clone());
        let wave = match (kind, baseline) {
            (DecoderKind::MsIstft, _) => decoder::decode_msistft(&mut g, &self.store, &self.cfg, &self.synth, zv, spk)?.waveform,
            (DecoderKind::Baseline, Some(store)) => decoder::decode_baseline(&mut g, store, &self.cfg, zv, spk)?,
            (DecoderKind::Baseline, None) => {
                return Err(crate::Error::InvalidInput("baseline decoder needs its parameter store".into()))
            }
        };
        Ok(g.value(wave).data().to_vec())
    }
}

impl ModelConfig {
    /// Flow hyperparameters derived from the model dimensions.
    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            channels: self.d_z,
            hidden: self.hidden,
            layers: self.flow_layers,
            kernel: self.kernel,
            blocks: self.flow_blocks,
            cond_dim: self.cond_dim,
        }
    }
}
