//! Adam with bias correction and a two-level learning-rate schedule.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr_initial: f64,
    pub lr_decayed: f64,
    /// First step (1-based) that uses `lr_decayed`.
    pub decay_step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_initial: 1e-4,
            lr_decayed: 5e-5,
            decay_step: 1000,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-9,
        }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.decay_step {
            self.lr_decayed
        } else {
            self.lr_initial
        }
    }
}

/// Moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<R> {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<R>>,
    v: BTreeMap<String, Vec<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter accepted by `filter` from its stored
    /// gradient, then clears those gradients.
    pub fn step(&mut self, store: &mut ParamStore<R>, filter: impl Fn(&str) -> bool) -> Result<()> {
        let names: Vec<String> = store.names().filter(|n| filter(n)).map(str::to_string).collect();
        if let Some(missing) = names.iter().find(|n| store.grad(n).is_none()) {
            return Err(Error::Optimizer(format!("no gradient for `{missing}`")));
        }
        self.step += 1;
        let c = &self.config;
        let lr = c.lr_at(self.step);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for name in names {
            let grad = store.take_grad(&name).expect("presence checked above");
            let param = store.get_mut(&name).expect("names come from the store");
            let n = param.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![R::zero(); n]);
            let v = self.v.entry(name).or_insert_with(|| vec![R::zero(); n]);
            for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                let m_new = c.beta1 * mi.as_f64() + (1.0 - c.beta1) * g;
                let v_new = c.beta2 * vi.as_f64() + (1.0 - c.beta2) * g * g;
                *mi = R::from_f64(m_new);
                *vi = R::from_f64(v_new);
                let update = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + c.eps);
                *p = R::from_f64(p.as_f64() - update);
            }
        }
        Ok(())
    }

    /// Moments as named tensors `prefix/m/<name>` and `prefix/v/<name>`.
    pub fn export(&self, store: &ParamStore<R>, prefix: &str) -> Vec<(String, Tensor<R>)> {
        let mut out = Vec::new();
        for (kind, map) in [("m", &self.m), ("v", &self.v)] {
            for (name, data) in map {
                let shape = store.get(name).map_or_else(|| vec![data.len()], |t| t.shape().to_vec());
                let t = Tensor::new(shape, data.clone()).expect("moment length matches its parameter");
                out.push((format!("{prefix}/{kind}/{name}"), t));
            }
        }
        out
    }

    /// Restores moments written by [`Adam::export`].
    pub fn import(&mut self, tensors: &[(String, Tensor<R>)], prefix: &str, step: u64, store: &ParamStore<R>) -> Result<()> {
        self.m.clear();
        self.v.clear();
        for (full, t) in tensors {
            let Some(rest) = full.strip_prefix(prefix).and_then(|r| r.strip_prefix('/')) else {
                continue;
            };
            let (kind, name) = rest
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("malformed optimizer entry `{full}`")))?;
            let p = store
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer entry for unknown parameter `{name}`")))?;
            if p.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("optimizer entry `{full}` has wrong shape")));
            }
            let map = match kind {
                "m" => &mut self.m,
                "v" => &mut self.v,
                _ => return Err(Error::Checkpoint(format!("unknown moment kind in `{full}`"))),
            };
            map.insert(name.to_string(), t.data().to_vec());
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_f64(&[v.len()], v).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[1.0, -2.0]);
        let mut opt = Adam::new(AdamConfig::default());
        s.set_grad("w", Tensor::zeros(&[2])).unwrap();
        opt.step(&mut s, |_| true).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0, -2.0]);
        assert!(s.grad("w").is_none());
    }

    #[test]
    fn first_step_closed_form() {
        let g = [0.3, -2.0, 1e-3];
        let mut s = store(&[0.0, 0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig::default());
        s.set_grad("w", Tensor::from_f64(&[3], &g).unwrap()).unwrap();
        opt.step(&mut s, |_| true).unwrap();
        for (p, g) in s.get("w").unwrap().data().iter().zip(g) {
            let expect = -1e-4 * g / (g.abs() + 1e-9);
            assert!((p - expect).abs() < 1e-15, "{p} vs {expect}");
        }
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = store(&[0.5]);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..100 {
            s.set_grad("w", Tensor::from_f64(&[1], &[2.0]).unwrap()).unwrap();
            opt.step(&mut s, |_| true).unwrap();
        }
        assert!(s.get("w").unwrap().data()[0] < 0.5 - 0.009);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store(&[0.5]);
        let mut opt = Adam::new(AdamConfig::default());
        assert!(matches!(opt.step(&mut s, |_| true), Err(Error::Optimizer(_))));
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn schedule_switches_at_decay_step() {
        let c = AdamConfig {
            decay_step: 10,
            ..AdamConfig::default()
        };
        assert_eq!(c.lr_at(9), 1e-4);
        assert_eq!(c.lr_at(10), 5e-5);
    }
}
