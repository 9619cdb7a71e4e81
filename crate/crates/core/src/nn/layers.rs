//! Parameterized layers built from graph ops and a [`ParamStore`].

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::real::Real;
use crate::error::Result;

/// Adds a `[C]` bias to `[B, C, L]`.
pub fn add_channel_bias<R: Real>(g: &mut Graph<R>, x: Var, b: Var) -> Result<Var> {
    let c = g.shape(b)[0];
    let b = g.reshape(b, &[1, c, 1])?;
    g.add(x, b)
}

/// Convolution with weights `name.w` and bias `name.b`.
pub fn conv1d<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    name: &str,
    x: Var,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.conv1d(x, w, stride, padding, dilation)?;
    add_channel_bias(g, y, b)
}

/// Odd-kernel convolution that keeps the length.
pub fn conv1d_same<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, name: &str, x: Var) -> Result<Var> {
    let k = store
        .get(&format!("{name}.w"))
        .map_or(1, |w| w.shape()[2]);
    conv1d(g, store, name, x, 1, k / 2, 1)
}

pub fn conv_transpose1d<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    name: &str,
    x: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.conv_transpose1d(x, w, stride, padding)?;
    add_channel_bias(g, y, b)
}

/// `[N, d_in] -> [N, d_out]`.
pub fn linear<R: Real>(g: &mut Graph<R>, store: &ParamStore<R>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ParamBuilder, Tensor};
    use rand::SeedableRng;

    #[test]
    fn same_conv_keeps_length_and_adds_bias() {
        let mut store = ParamStore::<f64>::new();
        ParamBuilder::new(&mut store, rand_chacha::ChaCha8Rng::seed_from_u64(0))
            .zero_conv("c", 2, 3, 5)
            .unwrap();
        store.get_mut("c.b").unwrap().data_mut().copy_from_slice(&[1.0, 2.0, 3.0]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 7], 0.5));
        let y = conv1d_same(&mut g, &store, "c", x).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 7]);
        assert_eq!(g.value(y).data()[7], 2.0);
    }
}
