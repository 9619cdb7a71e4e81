//! Joint generator and discriminator training on random utterance crops.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PipelineConfig;
use super::dataset::{extract_features, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::f0::f0_indices;
use crate::model::{discriminator, losses, standard_normal, ConditionInputs, Model};
use crate::nn::checkpoint::{opt_path, read_tensors, save_params, write_tensors};
use crate::nn::{Adam, Graph, Real, Tensor};

pub const METRICS_HEADER: &str = "step,L_total,L_recon,L_kl,L_adv_G,L_fm,L_disc,logdet";

/// Losses of one step, evaluated before that step's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub adv: f64,
    pub fm: f64,
    pub disc: f64,
    pub logdet: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.total, self.recon, self.kl, self.adv, self.fm, self.disc, self.logdet
        )
    }

    fn all_finite(&self) -> bool {
        [self.total, self.recon, self.kl, self.adv, self.fm, self.disc, self.logdet]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Fault injection for exercising the abort path.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Replaces the generator loss of this step with NaN.
    pub inject_nan_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub metrics: Vec<StepMetrics>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics_path: PathBuf,
}

impl TrainSummary {
    pub fn final_checkpoint(&self) -> &Path {
        self.checkpoints.last().expect("training writes at least one checkpoint")
    }
}

/// Aligned training crops of `W` frames.
pub struct Batch<R> {
    /// `[B, bins, W]`.
    pub x_lin: Tensor<R>,
    pub cond: ConditionInputs<R>,
    /// `[B, hop W]` waveform under the crop.
    pub audio: Tensor<R>,
}

/// Per-utterance conditioning tensors for `frames` frames from `start`.
fn cond_rows(rec: &UtteranceRecord, start: usize, w: usize, content: &mut Vec<f64>, f0_rows: &mut Vec<usize>) {
    let dim = rec.content.dim;
    let mut block = vec![0.0; dim * w];
    for t in 0..w {
        for (d, &v) in rec.content.frame(start + t).iter().enumerate() {
            block[d * w + t] = v;
        }
    }
    content.extend(block);
    f0_rows.extend(&f0_indices(&rec.f0)[start..start + w]);
}

/// Stacks `(record, start frame)` crops of `w` frames.
pub fn build_batch<R: Real>(picks: &[(&UtteranceRecord, usize)], w: usize, hop: usize) -> Result<Batch<R>> {
    let b = picks.len();
    let bins = picks[0].0.bins;
    let mut lin = Vec::with_capacity(b * bins * w);
    let mut content = Vec::new();
    let mut f0_rows = Vec::with_capacity(b * w);
    let mut stats = Vec::new();
    let mut emotion = Vec::new();
    let mut audio = vec![0.0; b * hop * w];
    for (i, &(rec, start)) in picks.iter().enumerate() {
        if start + w > rec.frames {
            return Err(Error::InvalidInput(format!(
                "{}: crop {}..{} exceeds {} frames",
                rec.id,
                start,
                start + w,
                rec.frames
            )));
        }
        for k in 0..bins {
            lin.extend_from_slice(&rec.linear[k * rec.frames + start..k * rec.frames + start + w]);
        }
        cond_rows(rec, start, w, &mut content, &mut f0_rows);
        stats.extend_from_slice(&rec.speaker_stats);
        emotion.extend_from_slice(&rec.emotion.values);
        let s0 = start * hop;
        let avail = rec.audio.len().saturating_sub(s0).min(hop * w);
        audio[i * hop * w..i * hop * w + avail].copy_from_slice(&rec.audio.samples[s0..s0 + avail]);
    }
    let dim = picks[0].0.content.dim;
    Ok(Batch {
        x_lin: Tensor::from_f64(&[b, bins, w], &lin)?,
        cond: ConditionInputs {
            content: Tensor::from_f64(&[b, dim, w], &content)?,
            speaker_stats: Tensor::from_f64(&[b, stats.len() / b], &stats)?,
            emotion: Tensor::from_f64(&[b, emotion.len() / b], &emotion)?,
            f0_rows,
        },
        audio: Tensor::from_f64(&[b, hop * w], &audio)?,
    })
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(step)
}

/// One joint step: both gradients come from the same parameter snapshot,
/// then the discriminator and the generator are updated in turn.
fn train_step(
    model: &mut Model<f32>,
    adam_g: &mut Adam<f32>,
    adam_d: &mut Adam<f32>,
    batch: &Batch<f32>,
    step: u64,
    seed: u64,
    opts: &TrainOptions,
) -> Result<StepMetrics> {
    let cfg = model.cfg.clone();
    let eps_shape = [batch.x_lin.shape()[0], cfg.d_z, batch.x_lin.shape()[2]];
    let eps = standard_normal::<f32>(&eps_shape, step_seed(seed, step));

    let mut g = Graph::new();
    let fw = model.forward_train(&mut g, &batch.x_lin, &batch.cond, &eps)?;

    let mut gd = Graph::new();
    let fake = gd.constant(g.value(fw.decoded.waveform).clone());
    let real = gd.constant(batch.audio.clone());
    let d_real = discriminator::discriminate(&mut gd, &model.store, &cfg, real)?;
    let d_fake = discriminator::discriminate(&mut gd, &model.store, &cfg, fake)?;
    let l_disc = losses::discriminator_loss(&mut gd, &d_real.scores, &d_fake.scores)?;
    let d_grads = gd.backward(l_disc)?;

    g.freeze("disc.");
    let real = g.constant(batch.audio.clone());
    let mel_real = model.mel.log_mel(&mut g, real)?;
    let mel_fake = model.mel.log_mel(&mut g, fw.decoded.waveform)?;
    let recon = losses::recon_loss(&mut g, mel_fake, mel_real)?;
    let kl = losses::kl_loss(&mut g, &fw.q, fw.z, fw.flow.z_p, &fw.prior, fw.flow.logdet)?;
    let h_real = discriminator::discriminate(&mut g, &model.store, &cfg, real)?;
    let h_fake = discriminator::discriminate(&mut g, &model.store, &cfg, fw.decoded.waveform)?;
    let adv = losses::adversarial_loss(&mut g, &h_fake.scores)?;
    let fm = losses::feature_matching_loss(&mut g, &h_real.hidden, &h_fake.hidden)?;
    let parts = losses::total_loss(&mut g, &cfg, recon, kl, adv, fm)?;

    let scalar = |g: &Graph<f32>, v| g.value(v).item().as_f64();
    let mut m = StepMetrics {
        step,
        total: scalar(&g, parts.total),
        recon: scalar(&g, recon),
        kl: scalar(&g, kl),
        adv: scalar(&g, adv),
        fm: scalar(&g, fm),
        disc: scalar(&gd, l_disc),
        logdet: scalar(&g, fw.flow.logdet),
    };
    if opts.inject_nan_at == Some(step) {
        m.total = f64::NAN;
    }
    if !m.all_finite() {
        return Err(Error::numerical("training loss", format!("non-finite loss at step {step}: {}", m.csv_row())));
    }
    let g_grads = g.backward(parts.total)?;

    model.store.accumulate_from(&gd, &d_grads)?;
    adam_d.step(&mut model.store, |n| n.starts_with("disc."))?;
    model.store.accumulate_from(&g, &g_grads)?;
    adam_g.step(&mut model.store, |n| !n.starts_with("disc."))?;
    Ok(m)
}

fn save_checkpoint(dir: &Path, name: &str, step: u64, model: &Model<f32>, adam_g: &Adam<f32>, adam_d: &Adam<f32>) -> Result<PathBuf> {
    let path = dir.join(name);
    save_params(&path, step, &model.store)?;
    let mut moments = adam_g.export(&model.store, "g");
    moments.extend(adam_d.export(&model.store, "d"));
    write_tensors(&opt_path(&path), step, &moments)?;
    Ok(path)
}

/// Copies every `disc.*` tensor of `path` into `model`, checking shapes.
pub fn load_discriminator(path: &Path, model: &mut Model<f32>) -> Result<usize> {
    let (_, tensors) = read_tensors(path)?;
    let mut loaded = 0;
    for (name, t) in tensors.into_iter().filter(|(n, _)| n.starts_with("disc.")) {
        let slot = model
            .store
            .get_mut(&name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: unknown discriminator tensor {name}", path.display())))?;
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
        loaded += 1;
    }
    if loaded == 0 || loaded != model.store.names().filter(|n| n.starts_with("disc.")).count() {
        return Err(Error::Checkpoint(format!("{}: incomplete discriminator ({loaded} tensors)", path.display())));
    }
    Ok(loaded)
}

/// Checkpoint file name for `step`.
pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

/// Trains on already-extracted records, writing `metrics.csv` and
/// checkpoints into `out_dir`.
pub fn train_records(cfg: &PipelineConfig, records: &[UtteranceRecord], out_dir: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    if records.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    let w = cfg.train.segment_frames;
    if let Some(r) = records.iter().find(|r| r.frames < w) {
        return Err(Error::InvalidInput(format!(
            "{} has {} frames, fewer than train.segment_frames = {w}",
            r.id, r.frames
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut model = Model::<f32>::new(cfg.model_config(), cfg.seed)?;
    if !cfg.paths.discriminator.is_empty() {
        let n = load_discriminator(Path::new(&cfg.paths.discriminator), &mut model)?;
        info!("initialized {n} discriminator tensors from {}", cfg.paths.discriminator);
    }
    let mut adam_g = Adam::new(cfg.adam_config());
    let mut adam_d = Adam::new(cfg.adam_config());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hop = cfg.stft.hop_length;

    let metrics_path = out_dir.join("metrics.csv");
    let mut log = BufWriter::new(File::create(&metrics_path)?);
    writeln!(log, "{METRICS_HEADER}")?;
    let mut summary = TrainSummary {
        metrics: Vec::new(),
        checkpoints: Vec::new(),
        metrics_path,
    };
    for step in 1..=cfg.optim.total_steps {
        let picks: Vec<(&UtteranceRecord, usize)> = (0..cfg.train.batch_size)
            .map(|_| {
                let rec = &records[rng.random_range(0..records.len())];
                (rec, rng.random_range(0..=rec.frames - w))
            })
            .collect();
        let batch = build_batch::<f32>(&picks, w, hop)?;
        let m = match train_step(&mut model, &mut adam_g, &mut adam_d, &batch, step, cfg.seed, opts) {
            Ok(m) => m,
            Err(e) => {
                log.flush()?;
                let kept = save_checkpoint(out_dir, "last_good.ckpt", step - 1, &model, &adam_g, &adam_d)?;
                log::error!("aborting at step {step}; parameters of step {} kept in {}", step - 1, kept.display());
                return Err(e);
            }
        };
        writeln!(log, "{}", m.csv_row())?;
        log.flush()?;
        if step % 50 == 0 || step == 1 {
            info!("step {step}: L_total {:.4} L_recon {:.4} L_kl {:.4}", m.total, m.recon, m.kl);
        }
        summary.metrics.push(m);
        if step % cfg.train.checkpoint_interval == 0 || step == cfg.optim.total_steps {
            let p = save_checkpoint(out_dir, &checkpoint_name(step), step, &model, &adam_g, &adam_d)?;
            summary.checkpoints.push(p);
        }
    }
    Ok(summary)
}

/// Extracts features for `dataset_dir` and trains. Files that fail to load
/// are skipped with a warning.
pub fn train(cfg: &PipelineConfig, dataset_dir: &Path, out_dir: &Path) -> Result<TrainSummary> {
    let report = extract_features(cfg, dataset_dir)?;
    train_records(cfg, &report.records, out_dir, &TrainOptions::default())
}
