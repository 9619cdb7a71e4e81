//! Non-causal gated convolution stack with optional per-layer conditioning.

use crate::error::Result;
use crate::nn::layers::conv1d;
use crate::nn::{Graph, ParamBuilder, ParamStore, Real, Var};

pub fn register<R: Real>(
    b: &mut ParamBuilder<'_, R>,
    name: &str,
    hidden: usize,
    layers: usize,
    kernel: usize,
    cond_dim: Option<usize>,
) -> Result<()> {
    if let Some(c) = cond_dim {
        b.conv(&format!("{name}.cond"), c, 2 * hidden * layers, 1)?;
    }
    for i in 0..layers {
        b.conv(&format!("{name}.in{i}"), hidden, 2 * hidden, kernel)?;
        let out = if i + 1 < layers { 2 * hidden } else { hidden };
        b.conv(&format!("{name}.rs{i}"), hidden, out, 1)?;
    }
    Ok(())
}

/// `x: [B, H, T]`, `cond: [B, C, T]`; returns the summed skip outputs.
pub fn forward<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    name: &str,
    x: Var,
    cond: Option<Var>,
    layers: usize,
) -> Result<Var> {
    let hidden = g.shape(x)[1];
    let kernel = store.get(&format!("{name}.in0.w")).map_or(1, |w| w.shape()[2]);
    let cond = match cond {
        Some(c) => Some(conv1d(g, store, &format!("{name}.cond"), c, 1, 0, 1)?),
        None => None,
    };
    let mut x = x;
    let mut skip: Option<Var> = None;
    for i in 0..layers {
        let mut h = conv1d(g, store, &format!("{name}.in{i}"), x, 1, kernel / 2, 1)?;
        if let Some(c) = cond {
            let part = g.slice(c, 1, 2 * hidden * i, 2 * hidden * (i + 1))?;
            h = g.add(h, part)?;
        }
        let a = g.slice(h, 1, 0, hidden)?;
        let b = g.slice(h, 1, hidden, 2 * hidden)?;
        let a = g.tanh(a)?;
        let b = g.sigmoid(b)?;
        let acts = g.mul(a, b)?;
        let rs = conv1d(g, store, &format!("{name}.rs{i}"), acts, 1, 0, 1)?;
        let s = if i + 1 < layers {
            let res = g.slice(rs, 1, 0, hidden)?;
            x = g.add(x, res)?;
            g.slice(rs, 1, hidden, 2 * hidden)?
        } else {
            rs
        };
        skip = Some(match skip {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    Ok(skip.expect("at least one layer"))
}
