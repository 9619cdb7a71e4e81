//! Finite-difference verification of analytic gradients.
//!
//! Each op class is exercised on a small random f64 instance. The scalar
//! probe is `sum(op(inputs) * r)` for a fixed random `r`, and every input
//! element is perturbed by `±h` for a central difference.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, OpKind, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub entries: Vec<OpReport>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> Vec<&OpReport> {
        self.entries.iter().filter(|e| !e.passed).collect()
    }

    pub fn push(&mut self, name: impl Into<String>, max_rel_error: f64) {
        self.entries.push(OpReport {
            name: name.into(),
            max_rel_error,
            passed: max_rel_error.is_finite() && max_rel_error < TOLERANCE,
        });
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<18} {:.3e} {}",
                e.name,
                e.max_rel_error,
                if e.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// `max|a - n| / max(|a|_inf, |n|_inf, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Compares the analytic gradient of `build(inputs)` (a scalar) with central
/// differences over every input element.
pub fn check_function(inputs: &[Tensor<f64>], build: &Build, corrupt: Option<OpKind>) -> Result<f64> {
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new();
    if let Some(kind) = corrupt {
        g.corrupt_gradient(kind);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        analytic.extend_from_slice(grads.get(v).expect("inputs require gradients").data());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[0.2, 1.2)` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.2..1.2);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Values in `[-1, 1]` at least 0.1 away from `±0.5`.
fn away_from_half(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let x: f64 = rng.random_range(-1.0..1.0);
        if (x.abs() - 0.5).abs() < 0.1 {
            x.signum() * if x.abs() < 0.5 { 0.35 } else { 0.65 }
        } else {
            x
        }
    })
}

/// Inputs and the op application for one op class.
fn case(kind: OpKind, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build>) {
    use OpKind::*;
    let x35 = uniform(rng, &[3, 5], -1.0, 1.0);
    match kind {
        Add | Sub | Mul | Div => {
            let a = uniform(rng, &[2, 3, 4], -1.0, 1.0);
            let b = if kind == Div {
                away_from_zero(rng, &[1, 3, 1])
            } else {
                uniform(rng, &[1, 3, 1], -1.0, 1.0)
            };
            let f: Box<Build> = Box::new(move |g, v| match kind {
                Add => g.add(v[0], v[1]),
                Sub => g.sub(v[0], v[1]),
                Mul => g.mul(v[0], v[1]),
                _ => g.div(v[0], v[1]),
            });
            (vec![a, b], f)
        }
        Atan2 => (
            vec![away_from_zero(rng, &[3, 4]), away_from_zero(rng, &[3, 4])],
            Box::new(|g, v| g.atan2(v[0], v[1])),
        ),
        Scale => (vec![x35], Box::new(|g, v| g.scale(v[0], 1.7))),
        AddScalar => (vec![x35], Box::new(|g, v| g.add_scalar(v[0], -0.3))),
        Tanh => (vec![x35], Box::new(|g, v| g.tanh(v[0]))),
        Sigmoid => (vec![x35], Box::new(|g, v| g.sigmoid(v[0]))),
        Exp => (vec![x35], Box::new(|g, v| g.exp(v[0]))),
        Sin => (vec![x35], Box::new(|g, v| g.sin(v[0]))),
        Cos => (vec![x35], Box::new(|g, v| g.cos(v[0]))),
        Square => (vec![x35], Box::new(|g, v| g.square(v[0]))),
        Log => (vec![uniform(rng, &[3, 5], 0.5, 2.0)], Box::new(|g, v| g.log(v[0]))),
        Sqrt => (vec![uniform(rng, &[3, 5], 0.5, 2.0)], Box::new(|g, v| g.sqrt(v[0]))),
        Abs => (vec![away_from_zero(rng, &[3, 5])], Box::new(|g, v| g.abs(v[0]))),
        LeakyRelu => (vec![away_from_zero(rng, &[3, 5])], Box::new(|g, v| g.leaky_relu(v[0], 0.1))),
        Clamp => (vec![away_from_half(rng, &[3, 5])], Box::new(|g, v| g.clamp(v[0], -0.5, 0.5))),
        Matmul => (
            vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4, 5], -1.0, 1.0)],
            Box::new(|g, v| g.matmul(v[0], v[1])),
        ),
        Conv1d => (
            vec![uniform(rng, &[2, 3, 9], -1.0, 1.0), uniform(rng, &[4, 3, 3], -1.0, 1.0)],
            Box::new(|g, v| g.conv1d(v[0], v[1], 2, 2, 2)),
        ),
        ConvTranspose1d => (
            vec![uniform(rng, &[2, 3, 5], -1.0, 1.0), uniform(rng, &[3, 4, 4], -1.0, 1.0)],
            Box::new(|g, v| g.conv_transpose1d(v[0], v[1], 2, 1)),
        ),
        LayerNorm => (vec![uniform(rng, &[2, 5, 3], -1.0, 1.0)], Box::new(|g, v| g.layer_norm(v[0], 1e-5))),
        Concat => (
            vec![uniform(rng, &[2, 3, 2], -1.0, 1.0), uniform(rng, &[2, 1, 2], -1.0, 1.0)],
            Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
        ),
        Slice => (vec![uniform(rng, &[2, 5, 3], -1.0, 1.0)], Box::new(|g, v| g.slice(v[0], 1, 1, 4))),
        Sum => (vec![x35], Box::new(|g, v| g.sum(v[0]))),
        Mean => (vec![x35], Box::new(|g, v| g.mean(v[0]))),
        SumAxis => (vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)], Box::new(|g, v| g.sum_axis(v[0], 1))),
        MeanAxis => (vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)], Box::new(|g, v| g.mean_axis(v[0], 1))),
        Gather => (vec![uniform(rng, &[5, 3], -1.0, 1.0)], Box::new(|g, v| g.gather(v[0], &[0, 2, 2, 4]))),
        Reshape => (vec![uniform(rng, &[2, 6], -1.0, 1.0)], Box::new(|g, v| g.reshape(v[0], &[3, 4]))),
        Permute => (vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)], Box::new(|g, v| g.permute(v[0], &[2, 0, 1]))),
        Flip => (vec![uniform(rng, &[2, 4, 3], -1.0, 1.0)], Box::new(|g, v| g.flip(v[0], 1))),
        ReflectPad => (vec![uniform(rng, &[2, 2, 5], -1.0, 1.0)], Box::new(|g, v| g.reflect_pad(v[0], 3, 2))),
    }
}

/// Checks one op class; the op output is contracted with a random tensor.
pub fn check_op(kind: OpKind, seed: u64, corrupt: Option<OpKind>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let (inputs, op) = case(kind, &mut rng);
    let probe_seed = rng.random::<u64>();
    let build = move |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
        let out = op(g, v)?;
        let shape = g.shape(out).to_vec();
        let mut r = ChaCha8Rng::seed_from_u64(probe_seed);
        let weights = g.constant(Tensor::from_fn(&shape, |_| r.random_range(-1.0..1.0)));
        let p = g.mul(out, weights)?;
        g.sum(p)
    };
    check_function(&inputs, &build, corrupt)
}

/// Runs every op class. Errors while building a case become failing
/// entries with an infinite error.
pub fn check_all_ops(seed: u64, corrupt: Option<OpKind>) -> GradcheckReport {
    let mut report = GradcheckReport::default();
    for kind in OpKind::ALL {
        let err = check_op(kind, seed, corrupt).unwrap_or(f64::INFINITY);
        report.push(kind.name(), err);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-12);
    }

    #[test]
    fn every_op_passes() {
        let report = check_all_ops(0, None);
        assert_eq!(report.entries.len(), OpKind::ALL.len());
        assert!(report.all_passed(), "\n{report}");
    }

    #[test]
    fn corrupted_conv_gradient_fails() {
        let report = check_all_ops(0, Some(OpKind::Conv1d));
        let failures: Vec<&str> = report.failures().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(failures, vec!["conv1d"]);
    }

    #[test]
    fn report_is_deterministic() {
        assert_eq!(check_all_ops(5, None), check_all_ops(5, None));
    }
}
