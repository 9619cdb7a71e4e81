//! Named trainable tensors with deterministic iteration order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph};
use super::real::Real;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<R> {
    params: BTreeMap<String, Tensor<R>>,
    grads: BTreeMap<String, Tensor<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    /// Registers a tensor; a name can be registered only once.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<R>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidInput(format!("parameter `{name}` registered twice")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<R>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count of parameters whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<R>> {
        self.grads.get(name)
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor<R>) -> Result<()> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))?;
        if p.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for `{name}` of shape {:?}",
                grad.shape(),
                p.shape()
            )));
        }
        self.grads.insert(name.to_string(), grad);
        Ok(())
    }

    /// Adds gradients of every trainable parameter leaf used in `graph`;
    /// parameters the loss did not reach receive zeros. Frozen parameters
    /// are skipped.
    pub fn accumulate_from(&mut self, graph: &Graph<R>, grads: &Gradients<R>) -> Result<()> {
        for (name, &var) in graph.param_vars() {
            if !graph.requires_grad(var) {
                continue;
            }
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(graph.shape(var)));
            match self.grads.get_mut(name) {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += *b),
                None => self.set_grad(name, g)?,
            }
        }
        Ok(())
    }

    pub fn take_grad(&mut self, name: &str) -> Option<Tensor<R>> {
        self.grads.remove(name)
    }

    pub fn clear_grads(&mut self) {
        self.grads.clear();
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            grads: BTreeMap::new(),
        }
    }
}

/// Registers layer parameters with seeded initialization.
pub struct ParamBuilder<'a, R> {
    pub store: &'a mut ParamStore<R>,
    rng: ChaCha8Rng,
}

impl<'a, R: Real> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore<R>, rng: ChaCha8Rng) -> Self {
        Self { store, rng }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn kaiming_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..numel(shape))
            .map(|_| R::from_f64(self.rng.random_range(-bound..bound)))
            .collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<()> {
        let dist = rand_distr::Normal::new(0.0, std)
            .map_err(|e| Error::InvalidConfig(format!("normal init: {e}")))?;
        let data = (0..numel(shape))
            .map(|_| R::from_f64(self.rng.sample(dist)))
            .collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.store.insert(name, Tensor::zeros(shape))
    }

    /// `name.w: [c_out, c_in, k]`, `name.b: [c_out]`.
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        self.kaiming_uniform(&format!("{name}.w"), &[c_out, c_in, k], c_in * k)?;
        self.zeros(&format!("{name}.b"), &[c_out])
    }

    /// Zero-initialized convolution.
    pub fn zero_conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        self.zeros(&format!("{name}.w"), &[c_out, c_in, k])?;
        self.zeros(&format!("{name}.b"), &[c_out])
    }

    /// `name.w: [c_in, c_out, k]`, `name.b: [c_out]`. Each output sample
    /// sees about `c_in * k / stride` inputs, which sets the fan-in.
    pub fn conv_transpose(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<()> {
        self.kaiming_uniform(&format!("{name}.w"), &[c_in, c_out, k], c_in * k.div_ceil(stride.max(1)))?;
        self.zeros(&format!("{name}.b"), &[c_out])
    }

    /// `name.w: [d_in, d_out]`, `name.b: [d_out]`.
    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<()> {
        self.kaiming_uniform(&format!("{name}.w"), &[d_in, d_out], d_in)?;
        self.zeros(&format!("{name}.b"), &[d_out])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let build = || {
            let mut s = ParamStore::<f64>::new();
            let mut b = ParamBuilder::new(&mut s, ChaCha8Rng::seed_from_u64(3));
            b.conv("c", 4, 8, 3).unwrap();
            s
        };
        let (a, b) = (build(), build());
        assert_eq!(a, b);
        let bound = 1.0 / 12f64.sqrt();
        assert!(a.get("c.w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("c.b").unwrap().data().iter().all(|v| *v == 0.0));
        assert_eq!(a.count("c."), 8 * 4 * 3 + 8);
    }

    #[test]
    fn gradient_shape_checked() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.set_grad("a", Tensor::zeros(&[3])).is_err());
        assert!(s.set_grad("b", Tensor::zeros(&[2])).is_err());
    }
}
