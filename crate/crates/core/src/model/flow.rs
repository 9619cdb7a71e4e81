//! Conditional normalizing flow of affine coupling blocks.
//!
//! Each block keeps the first half of the channels, predicts a shift `m` and
//! log-scale `log_s` for the second half from it and the condition, and then
//! reverses the channel order. Output projections start at zero, so a fresh
//! stack is a pure permutation with zero log-determinant.

use crate::error::{Error, Result};
use crate::nn::layers::conv1d;
use crate::nn::{Graph, ParamBuilder, ParamStore, Real, Var};

use super::wavenet;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub cond_dim: usize,
}

impl FlowConfig {
    fn half(&self) -> usize {
        self.channels / 2
    }
}

pub struct FlowOutput {
    pub z_p: Var,
    /// Sum of every `log_s` over blocks, channels, frames and batch.
    pub logdet: Var,
    pub block_logdets: Vec<Var>,
}

pub fn register<R: Real>(b: &mut ParamBuilder<'_, R>, cfg: &FlowConfig) -> Result<()> {
    if cfg.channels < 2 || !cfg.channels.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("flow needs an even channel count, got {}", cfg.channels)));
    }
    let half = cfg.half();
    for i in 0..cfg.blocks {
        b.conv(&format!("flow.{i}.pre"), half, cfg.hidden, 1)?;
        wavenet::register(b, &format!("flow.{i}.wn"), cfg.hidden, cfg.layers, cfg.kernel, Some(cfg.cond_dim))?;
        b.zero_conv(&format!("flow.{i}.post"), cfg.hidden, 2 * (cfg.channels - half), 1)?;
    }
    Ok(())
}

fn check(g: &Graph<impl Real>, cfg: &FlowConfig, z: Var, c: Var) -> Result<()> {
    let (sz, sc) = (g.shape(z), g.shape(c));
    if sz.len() != 3 || sc.len() != 3 || sz[1] != cfg.channels || sc[1] != cfg.cond_dim {
        return Err(Error::Shape(format!("flow: latent {:?}, condition {:?}", sz, sc)));
    }
    if sz[0] != sc[0] || sz[2] != sc[2] {
        return Err(Error::Shape(format!(
            "flow: latent has {} frames, condition has {}",
            sz[2], sc[2]
        )));
    }
    Ok(())
}

/// `(m, log_s)` for block `i` from the pass-through half.
fn coupling<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    cfg: &FlowConfig,
    i: usize,
    x_a: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let h = conv1d(g, store, &format!("flow.{i}.pre"), x_a, 1, 0, 1)?;
    let h = wavenet::forward(g, store, &format!("flow.{i}.wn"), h, Some(c), cfg.layers)?;
    let stats = conv1d(g, store, &format!("flow.{i}.post"), h, 1, 0, 1)?;
    let nb = cfg.channels - cfg.half();
    let m = g.slice(stats, 1, 0, nb)?;
    let log_s = g.slice(stats, 1, nb, 2 * nb)?;
    Ok((m, log_s))
}

/// `z -> z_p` with the exact log-determinant.
pub fn flow_forward<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    cfg: &FlowConfig,
    z: Var,
    c: Var,
) -> Result<FlowOutput> {
    check(g, cfg, z, c)?;
    let half = cfg.half();
    let mut x = z;
    let mut block_logdets = Vec::with_capacity(cfg.blocks);
    for i in 0..cfg.blocks {
        let x_a = g.slice(x, 1, 0, half)?;
        let x_b = g.slice(x, 1, half, cfg.channels)?;
        let (m, log_s) = coupling(g, store, cfg, i, x_a, c)?;
        let scale = g.exp(log_s)?;
        let y_b = g.mul(x_b, scale)?;
        let y_b = g.add(m, y_b)?;
        let y = g.concat(&[x_a, y_b], 1)?;
        x = g.flip(y, 1)?;
        block_logdets.push(g.sum(log_s)?);
    }
    let mut logdet = block_logdets[0];
    for &b in &block_logdets[1..] {
        logdet = g.add(logdet, b)?;
    }
    Ok(FlowOutput {
        z_p: x,
        logdet,
        block_logdets,
    })
}

/// Exact inverse, blocks in reverse order.
pub fn flow_inverse<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, cfg: &FlowConfig, z_p: Var, c: Var) -> Result<Var> {
    check(g, cfg, z_p, c)?;
    let half = cfg.half();
    let mut x = z_p;
    for i in (0..cfg.blocks).rev() {
        let y = g.flip(x, 1)?;
        let x_a = g.slice(y, 1, 0, half)?;
        let y_b = g.slice(y, 1, half, cfg.channels)?;
        let (m, log_s) = coupling(g, store, cfg, i, x_a, c)?;
        let d = g.sub(y_b, m)?;
        let neg = g.neg(log_s)?;
        let inv = g.exp(neg)?;
        let x_b = g.mul(d, inv)?;
        x = g.concat(&[x_a, x_b], 1)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_normal;
    use crate::nn::Tensor;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> FlowConfig {
        FlowConfig {
            channels: 4,
            hidden: 8,
            layers: 2,
            kernel: 3,
            blocks: 4,
            cond_dim: 5,
        }
    }

    fn store<R: Real>(cfg: &FlowConfig, seed: u64, post_std: f64) -> ParamStore<R> {
        let mut s = ParamStore::new();
        register(&mut ParamBuilder::new(&mut s, ChaCha8Rng::seed_from_u64(seed)), cfg).unwrap();
        if post_std > 0.0 {
            let names: Vec<String> = s.names().filter(|n| n.contains(".post.")).map(String::from).collect();
            for (i, n) in names.iter().enumerate() {
                let shape = s.get(n).unwrap().shape().to_vec();
                let noise = standard_normal::<R>(&shape, seed * 131 + i as u64);
                let t = s.get_mut(n).unwrap();
                for (v, e) in t.data_mut().iter_mut().zip(noise.data()) {
                    *v = R::from_f64(e.as_f64() * post_std);
                }
            }
        }
        s
    }

    fn forward<R: Real>(cfg: &FlowConfig, s: &ParamStore<R>, z: &Tensor<R>, c: &Tensor<R>) -> (Tensor<R>, f64, Vec<f64>) {
        let mut g = Graph::new();
        let zv = g.input(z.clone());
        let cv = g.constant(c.clone());
        let out = flow_forward(&mut g, s, cfg, zv, cv).unwrap();
        let blocks = out.block_logdets.iter().map(|&b| g.value(b).item().as_f64()).collect();
        (g.value(out.z_p).clone(), g.value(out.logdet).item().as_f64(), blocks)
    }

    fn inverse<R: Real>(cfg: &FlowConfig, s: &ParamStore<R>, z_p: &Tensor<R>, c: &Tensor<R>) -> Tensor<R> {
        let mut g = Graph::new();
        let zv = g.input(z_p.clone());
        let cv = g.constant(c.clone());
        let x = flow_inverse(&mut g, s, cfg, zv, cv).unwrap();
        g.value(x).clone()
    }

    #[test]
    fn identity_initialization_is_a_permutation_with_zero_logdet() {
        let cfg = FlowConfig { blocks: 3, ..small() };
        let s = store::<f64>(&cfg, 1, 0.0);
        let z = standard_normal::<f64>(&[1, 4, 3], 2);
        let c = standard_normal::<f64>(&[1, 5, 3], 3);
        let (z_p, logdet, _) = forward(&cfg, &s, &z, &c);
        assert_eq!(logdet, 0.0);
        // An odd number of flips reverses the channel order.
        for ch in 0..4 {
            for t in 0..3 {
                assert_eq!(z_p.data()[ch * 3 + t], z.data()[(3 - ch) * 3 + t]);
            }
        }
        let back = inverse(&cfg, &s, &z_p, &c);
        assert_eq!(back.data(), z.data());
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        let cfg = small();
        let (d, t) = (cfg.channels, 3);
        for seed in 0..3 {
            let s = store::<f64>(&cfg, seed, 0.3);
            let z = standard_normal::<f64>(&[1, d, t], 100 + seed);
            let c = standard_normal::<f64>(&[1, cfg.cond_dim, t], 200 + seed);
            let (_, logdet, _) = forward(&cfg, &s, &z, &c);
            let n = d * t;
            let h = 1e-5;
            let mut jac = DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                let mut plus = z.clone();
                plus.data_mut()[j] += h;
                let mut minus = z.clone();
                minus.data_mut()[j] -= h;
                let (yp, _, _) = forward(&cfg, &s, &plus, &c);
                let (ym, _, _) = forward(&cfg, &s, &minus, &c);
                for i in 0..n {
                    jac[(i, j)] = (yp.data()[i] - ym.data()[i]) / (2.0 * h);
                }
            }
            let oracle = jac.determinant().abs().ln();
            assert!(
                (logdet - oracle).abs() <= 1e-4 * oracle.abs().max(1.0),
                "seed {seed}: logdet {logdet} vs {oracle}"
            );
        }
    }

    #[test]
    fn round_trip_is_exact_at_both_precisions() {
        let cfg = small();
        let s64 = store::<f64>(&cfg, 7, 0.3);
        let z = standard_normal::<f64>(&[2, 4, 3], 8);
        let c = standard_normal::<f64>(&[2, 5, 3], 9);
        let (z_p, _, _) = forward(&cfg, &s64, &z, &c);
        assert!(inverse(&cfg, &s64, &z_p, &c).max_abs_diff(&z) < 1e-6);

        let s32: ParamStore<f32> = s64.cast();
        let (z32, c32) = (z.cast::<f32>(), c.cast::<f32>());
        let (z_p, _, _) = forward(&cfg, &s32, &z32, &c32);
        assert!(inverse(&cfg, &s32, &z_p, &c32).max_abs_diff(&z32) < 1e-5);
    }

    #[test]
    fn scaling_the_last_block_adds_its_log_scales() {
        let cfg = small();
        let mut s = store::<f64>(&cfg, 11, 0.3);
        let z = standard_normal::<f64>(&[1, 4, 3], 12);
        let c = standard_normal::<f64>(&[1, 5, 3], 13);
        let (_, before, blocks) = forward(&cfg, &s, &z, &c);
        let last = cfg.blocks - 1;
        for suffix in ["w", "b"] {
            let t = s.get_mut(&format!("flow.{last}.post.{suffix}")).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        }
        let (_, after, _) = forward(&cfg, &s, &z, &c);
        assert!((after - (before + blocks[last])).abs() < 1e-12);
    }

    #[test]
    fn frame_mismatch_is_a_shape_error() {
        let cfg = small();
        let s = store::<f64>(&cfg, 1, 0.0);
        let mut g = Graph::new();
        let z = g.input(Tensor::zeros(&[1, 4, 3]));
        let c = g.constant(Tensor::zeros(&[1, 5, 4]));
        assert!(matches!(flow_forward(&mut g, &s, &cfg, z, c), Err(Error::Shape(_))));
        assert!(matches!(flow_inverse(&mut g, &s, &cfg, z, c), Err(Error::Shape(_))));
    }
}
