//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op appends a node holding its value, so backward can read inputs
//! and outputs without re-running the forward pass. Op outputs are checked
//! for NaN/Inf as they are produced; the error carries the op's name.

use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom};
use super::params::ParamStore;
use super::real::{matmul_into, Real};
use super::tensor::{numel, Tensor};
use crate::dsp::stft::reflect_index;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Every op class the engine differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
    Square,
    Clamp,
    Atan2,
    Matmul,
    Conv1d,
    ConvTranspose1d,
    LayerNorm,
    Concat,
    Slice,
    Sum,
    Mean,
    SumAxis,
    MeanAxis,
    Gather,
    Reshape,
    Permute,
    Flip,
    ReflectPad,
}

impl OpKind {
    pub const ALL: [OpKind; 33] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::LeakyRelu,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Sqrt,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Clamp,
        OpKind::Atan2,
        OpKind::Matmul,
        OpKind::Conv1d,
        OpKind::ConvTranspose1d,
        OpKind::LayerNorm,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SumAxis,
        OpKind::MeanAxis,
        OpKind::Gather,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::Flip,
        OpKind::ReflectPad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Clamp => "clamp",
            OpKind::Atan2 => "atan2",
            OpKind::Matmul => "matmul",
            OpKind::Conv1d => "conv1d",
            OpKind::ConvTranspose1d => "conv_transpose1d",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumAxis => "sum_axis",
            OpKind::MeanAxis => "mean_axis",
            OpKind::Gather => "gather",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute",
            OpKind::Flip => "flip",
            OpKind::ReflectPad => "reflect_pad",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
    Square,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Atan2,
}

#[derive(Debug)]
enum Op<R> {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    LeakyRelu(Var, R),
    Scale(Var, R),
    AddScalar(Var),
    Clamp(Var, R, R),
    Matmul(Var, Var),
    Conv1d { x: Var, w: Var, geom: ConvGeom },
    ConvT1d { x: Var, w: Var, geom: ConvGeom },
    LayerNorm { x: Var, rstd: Vec<R> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize, mean: bool },
    Gather { table: Var, indices: Vec<usize> },
    Reshape(Var),
    Permute { x: Var, map: Vec<usize> },
    ReflectPad { x: Var, map: Vec<usize> },
}

#[derive(Debug)]
struct Node<R> {
    value: Tensor<R>,
    kind: Option<OpKind>,
    op: Op<R>,
    needs_grad: bool,
}

/// Gradients of graph leaves produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<R> {
    leaves: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of a leaf; `None` if the leaf did not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Offsets from the out-shape flat index into an input broadcast to it.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - input.len();
    let mut in_strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        let dim = if d >= pad { input[d - pad] } else { 1 };
        in_strides[d] = if dim == 1 { 0 } else { s };
        s *= dim;
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += in_strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= in_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

/// `(outer, n, inner)` split of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn acc<R: Real>(grads: &mut [Option<Vec<R>>], v: Var, len: usize, f: impl FnOnce(&mut [R])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![R::zero(); len]);
    f(slot);
}

pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
    params: BTreeMap<String, Var>,
    frozen: Vec<String>,
    corrupt: Option<OpKind>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            frozen: Vec::new(),
            corrupt: None,
        }
    }

    /// Scales the gradient entering every `kind` node by 1.1 during
    /// backward. A negative control for gradient checks.
    pub fn corrupt_gradient(&mut self, kind: OpKind) {
        self.corrupt = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, kind: OpKind, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> Result<Var> {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                kind.name(),
                format!("non-finite output at flat index {i} of shape {:?}", value.shape()),
            ));
        }
        self.nodes.push(Node {
            value,
            kind: Some(kind),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            kind: None,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn input(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value as a new constant leaf (gradient stop).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Parameters whose names start with `prefix` enter this graph as
    /// constants from now on.
    pub fn freeze(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    /// Whether `v` participates in differentiation.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// The named parameter as a leaf, inserted once per graph.
    pub fn param(&mut self, store: &ParamStore<R>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))?
            .clone();
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.leaf(value, trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let op_kind = match kind {
            Binary::Add => OpKind::Add,
            Binary::Sub => OpKind::Sub,
            Binary::Mul => OpKind::Mul,
            Binary::Div => OpKind::Div,
            Binary::Atan2 => OpKind::Atan2,
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| {
            Error::Shape(format!("{}: cannot broadcast {:?} with {:?}", op_kind.name(), sa, sb))
        })?;
        let f = |x: R, y: R| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
            Binary::Atan2 => x.atan2(y),
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<R> = if sa == out_shape && sb == out_shape {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, &sa);
            let mb = broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(op_kind, Tensor::new(out_shape, data)?, Op::Binary(kind, a, b), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// Elementwise `atan2(y, x)`, the angle of `(x, y)` in `(-pi, pi]`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.binary(Binary::Atan2, y, x)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let (op_kind, f): (OpKind, fn(R) -> R) = match kind {
            Unary::Tanh => (OpKind::Tanh, |v| v.tanh()),
            Unary::Sigmoid => (OpKind::Sigmoid, |v| R::one() / (R::one() + (-v).exp())),
            Unary::Exp => (OpKind::Exp, |v| v.exp()),
            Unary::Log => (OpKind::Log, |v| v.ln()),
            Unary::Sqrt => (OpKind::Sqrt, |v| v.sqrt()),
            Unary::Sin => (OpKind::Sin, |v| v.sin()),
            Unary::Cos => (OpKind::Cos, |v| v.cos()),
            Unary::Abs => (OpKind::Abs, |v| v.abs()),
            Unary::Square => (OpKind::Square, |v| v * v),
        };
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        let needs = self.needs(x);
        self.push(op_kind, out, Op::Unary(kind, x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sin, x)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Cos, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = R::from_f64(slope);
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| if v > R::zero() { v } else { v * s }).collect(),
        )?;
        let needs = self.needs(x);
        self.push(OpKind::LeakyRelu, out, Op::LeakyRelu(x, s), needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = R::from_f64(c);
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v * c).collect())?;
        let needs = self.needs(x);
        self.push(OpKind::Scale, out, Op::Scale(x, c), needs)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = R::from_f64(c);
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v + c).collect())?;
        let needs = self.needs(x);
        self.push(OpKind::AddScalar, out, Op::AddScalar(x), needs)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (R::from_f64(lo), R::from_f64(hi));
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| v.max(lo).min(hi)).collect(),
        )?;
        let needs = self.needs(x);
        self.push(OpKind::Clamp, out, Op::Clamp(x, lo, hi), needs)
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![R::zero(); m * n];
        matmul_into(self.value(a).data(), false, self.value(b).data(), false, &mut out, m, k, n, R::zero());
        let needs = self.needs(a) || self.needs(b);
        self.push(OpKind::Matmul, Tensor::new(vec![m, n], out)?, Op::Matmul(a, b), needs)
    }

    /// `x: [B, Cin, L]`, `w: [Cout, Cin, K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize, dilation: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || stride == 0 || dilation == 0 {
            return Err(Error::Shape(format!("conv1d: input {:?}, weight {:?}", sx, sw)));
        }
        let len_out = ConvGeom::conv_out_len(sx[2], sw[2], stride, padding, dilation)
            .ok_or_else(|| Error::Shape(format!("conv1d: input length {} too short", sx[2])))?;
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            len_in: sx[2],
            len_out,
            kernel: sw[2],
            stride,
            padding,
            dilation,
        };
        let out = kernels::conv1d_forward(self.value(x).data(), self.value(w).data(), &geom);
        let needs = self.needs(x) || self.needs(w);
        self.push(
            OpKind::Conv1d,
            Tensor::new(vec![geom.batch, geom.c_out, len_out], out)?,
            Op::Conv1d { x, w, geom },
            needs,
        )
    }

    /// `x: [B, Cin, L]`, `w: [Cin, Cout, K]`; output length `(L-1)s - 2p + K`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[0] || stride == 0 {
            return Err(Error::Shape(format!("conv_transpose1d: input {:?}, weight {:?}", sx, sw)));
        }
        let len_out = ConvGeom::transposed_out_len(sx[2], sw[2], stride, padding)
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::Shape("conv_transpose1d: padding exceeds output".into()))?;
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[1],
            len_in: sx[2],
            len_out,
            kernel: sw[2],
            stride,
            padding,
            dilation: 1,
        };
        let out = kernels::conv_transpose1d_forward(self.value(x).data(), self.value(w).data(), &geom);
        let needs = self.needs(x) || self.needs(w);
        self.push(
            OpKind::ConvTranspose1d,
            Tensor::new(vec![geom.batch, geom.c_out, len_out], out)?,
            Op::ConvT1d { x, w, geom },
            needs,
        )
    }

    /// Normalizes `[B, C, L]` over the channel axis (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::Shape(format!("layer_norm expects [B, C, L], got {:?}", s)));
        }
        let (out, rstd) = kernels::layer_norm_forward(self.value(x).data(), s[0], s[1], s[2], eps);
        let needs = self.needs(x);
        self.push(OpKind::LayerNorm, Tensor::new(s, out)?, Op::LayerNorm { x, rstd }, needs)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {:?}", base)));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let same = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::Shape(format!("concat: {:?} vs {:?} on axis {axis}", s, base)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            OpKind::Concat,
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            needs,
        )
    }

    /// Elements `start..end` of `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(Error::Shape(format!("slice {start}..{end} on axis {axis} of {:?}", s)));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let needs = self.needs(x);
        self.push(OpKind::Slice, Tensor::new(shape, data)?, Op::Slice { x, axis, start }, needs)
    }

    /// Splits `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &n in sizes {
            out.push(self.slice(x, axis, start, start + n)?);
            start += n;
        }
        if start != self.shape(x)[axis] {
            return Err(Error::Shape(format!("split sizes {:?} do not cover axis {axis}", sizes)));
        }
        Ok(out)
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let needs = self.needs(x);
        self.push(OpKind::Sum, Tensor::scalar(R::from_f64(s)), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel().max(1) as f64;
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let needs = self.needs(x);
        self.push(OpKind::Mean, Tensor::scalar(R::from_f64(s / n)), Op::Mean(x), needs)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("reduce axis {axis} of {:?}", s)));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0f64;
                for j in 0..n {
                    acc += src[(o * n + j) * inner + i].as_f64();
                }
                if mean {
                    acc /= n as f64;
                }
                data.push(R::from_f64(acc));
            }
        }
        let mut shape = s;
        shape[axis] = 1;
        let needs = self.needs(x);
        let kind = if mean { OpKind::MeanAxis } else { OpKind::SumAxis };
        self.push(kind, Tensor::new(shape, data)?, Op::SumAxis { x, axis, mean }, needs)
    }

    /// Sum over one axis, kept with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    /// Rows of a `[N, D]` table, giving `[indices.len(), D]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("gather table must be 2-D, got {:?}", s)));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("gather index {bad} out of {rows} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let needs = self.needs(table);
        self.push(
            OpKind::Gather,
            Tensor::new(vec![indices.len(), d], data)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        self.push(OpKind::Reshape, value, Op::Reshape(x), needs)
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("bad permutation {:?} for {:?}", perm, s)));
        }
        let mut in_strides = vec![1usize; s.len()];
        for d in (0..s.len().saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * s[d + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = numel(&s);
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; s.len()];
        let mut off = 0usize;
        for _ in 0..n {
            map.push(off);
            for d in (0..s.len()).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                off -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let needs = self.needs(x);
        self.push(OpKind::Permute, Tensor::new(out_shape, data)?, Op::Permute { x, map }, needs)
    }

    /// Reverses the order of elements along `axis`.
    pub fn flip(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("flip axis {axis} of {:?}", s)));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let mut map = Vec::with_capacity(numel(&s));
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + (n - 1 - j)) * inner;
                map.extend(base..base + inner);
            }
        }
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let needs = self.needs(x);
        self.push(OpKind::Flip, Tensor::new(s, data)?, Op::Permute { x, map }, needs)
    }

    /// Mirror padding of the last axis.
    pub fn reflect_pad(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let len = *s.last().ok_or_else(|| Error::Shape("reflect_pad of a scalar".into()))?;
        if len == 0 {
            return Err(Error::Shape("reflect_pad of an empty axis".into()));
        }
        let rows = numel(&s) / len;
        let out_len = len + left + right;
        let mut map = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            for i in 0..out_len {
                map.push(r * len + reflect_index(i as isize - left as isize, len));
            }
        }
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = out_len;
        let needs = self.needs(x);
        self.push(OpKind::ReflectPad, Tensor::new(shape, data)?, Op::ReflectPad { x, map }, needs)
    }

    /// Reverse-mode sweep from a scalar. Leaves that require gradients but
    /// were not reached get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<R>>> = (0..n).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else {
                if matches!(node.op, Op::Leaf) {
                    leaves[i] = Some(Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            let g = match (self.corrupt, node.kind) {
                (Some(c), Some(k)) if c == k => g.into_iter().map(|v| v * R::from_f64(1.1)).collect(),
                _ => g,
            };
            self.propagate(i, &g, &mut grads, &mut leaves)?;
        }
        for (i, node) in self.nodes.iter().enumerate().skip(n) {
            if node.needs_grad && matches!(node.op, Op::Leaf) {
                leaves[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { leaves })
    }

    fn propagate(
        &self,
        i: usize,
        g: &[R],
        grads: &mut [Option<Vec<R>>],
        leaves: &mut [Option<Tensor<R>>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let size = |v: Var| self.value(v).numel();
        match &node.op {
            Op::Leaf => {
                leaves[i] = Some(Tensor::new(node.value.shape().to_vec(), g.to_vec())?);
            }
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let out_shape = node.value.shape();
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                let same = self.shape(a) == out_shape && self.shape(b) == out_shape;
                let (ma, mb) = if same {
                    (None, None)
                } else {
                    (
                        Some(broadcast_map(out_shape, self.shape(a))),
                        Some(broadcast_map(out_shape, self.shape(b))),
                    )
                };
                let ia = |k: usize| ma.as_ref().map_or(k, |m| m[k]);
                let ib = |k: usize| mb.as_ref().map_or(k, |m| m[k]);
                if self.needs(a) {
                    acc(grads, a, size(a), |ga| {
                        for k in 0..g.len() {
                            let (x, z) = (va[ia(k)], vb[ib(k)]);
                            ga[ia(k)] += match kind {
                                Binary::Add | Binary::Sub => g[k],
                                Binary::Mul => g[k] * z,
                                Binary::Div => g[k] / z,
                                Binary::Atan2 => g[k] * z / (x * x + z * z),
                            };
                        }
                    });
                }
                if self.needs(b) {
                    acc(grads, b, size(b), |gb| {
                        for k in 0..g.len() {
                            let (x, z) = (va[ia(k)], vb[ib(k)]);
                            gb[ib(k)] += match kind {
                                Binary::Add => g[k],
                                Binary::Sub => -g[k],
                                Binary::Mul => g[k] * x,
                                Binary::Div => -g[k] * x / (z * z),
                                Binary::Atan2 => -g[k] * x / (x * x + z * z),
                            };
                        }
                    });
                }
            }
            Op::Unary(kind, x) => {
                let x = *x;
                let xv = self.value(x).data();
                acc(grads, x, size(x), |gx| {
                    for k in 0..g.len() {
                        let d = match kind {
                            Unary::Tanh => R::one() - y[k] * y[k],
                            Unary::Sigmoid => y[k] * (R::one() - y[k]),
                            Unary::Exp => y[k],
                            Unary::Log => R::one() / xv[k],
                            Unary::Sqrt => R::from_f64(0.5) / y[k],
                            Unary::Sin => xv[k].cos(),
                            Unary::Cos => -xv[k].sin(),
                            Unary::Abs => xv[k].signum() * if xv[k] == R::zero() { R::zero() } else { R::one() },
                            Unary::Square => R::from_f64(2.0) * xv[k],
                        };
                        gx[k] += g[k] * d;
                    }
                });
            }
            Op::LeakyRelu(x, s) => {
                let xv = self.value(*x).data();
                acc(grads, *x, size(*x), |gx| {
                    for k in 0..g.len() {
                        gx[k] += if xv[k] > R::zero() { g[k] } else { g[k] * *s };
                    }
                });
            }
            Op::Scale(x, c) => acc(grads, *x, size(*x), |gx| {
                for k in 0..g.len() {
                    gx[k] += g[k] * *c;
                }
            }),
            Op::AddScalar(x) => acc(grads, *x, size(*x), |gx| {
                for k in 0..g.len() {
                    gx[k] += g[k];
                }
            }),
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                acc(grads, *x, size(*x), |gx| {
                    for k in 0..g.len() {
                        if xv[k] >= *lo && xv[k] <= *hi {
                            gx[k] += g[k];
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.needs(a) {
                    let vb = self.value(b).data();
                    acc(grads, a, m * k, |ga| matmul_into(g, false, vb, true, ga, m, n, k, R::one()));
                }
                if self.needs(b) {
                    let va = self.value(a).data();
                    acc(grads, b, k * n, |gb| matmul_into(va, true, g, false, gb, k, m, n, R::one()));
                }
            }
            Op::Conv1d { x, w, geom } | Op::ConvT1d { x, w, geom } => {
                let (x, w) = (*x, *w);
                let transposed = matches!(node.op, Op::ConvT1d { .. });
                let backward = if transposed {
                    kernels::conv_transpose1d_backward
                } else {
                    kernels::conv1d_backward
                };
                let (dx, dw) = backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    g,
                    geom,
                    self.needs(x),
                    self.needs(w),
                );
                if let Some(dx) = dx {
                    acc(grads, x, dx.len(), |gx| gx.iter_mut().zip(&dx).for_each(|(a, b)| *a += *b));
                }
                if let Some(dw) = dw {
                    acc(grads, w, dw.len(), |gw| gw.iter_mut().zip(&dw).for_each(|(a, b)| *a += *b));
                }
            }
            Op::LayerNorm { x, rstd } => {
                let s = self.shape(*x);
                let dx = kernels::layer_norm_backward(y, rstd, g, s[0], s[1], s[2]);
                acc(grads, *x, dx.len(), |gx| gx.iter_mut().zip(&dx).for_each(|(a, b)| *a += *b));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    if self.needs(v) {
                        acc(grads, v, size(v), |gv| {
                            for o in 0..outer {
                                let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                                let dst = &mut gv[o * n * inner..(o + 1) * n * inner];
                                dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
                            }
                        });
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let m = node.value.shape()[*axis];
                acc(grads, *x, size(*x), |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + m) * inner];
                        let src = &g[o * m * inner..(o + 1) * m * inner];
                        dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
                    }
                });
            }
            Op::Sum(x) => acc(grads, *x, size(*x), |gx| gx.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let scale = g[0] / R::from_f64(size(*x).max(1) as f64);
                acc(grads, *x, size(*x), |gx| gx.iter_mut().for_each(|v| *v += scale));
            }
            Op::SumAxis { x, axis, mean } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let c = if *mean { R::one() / R::from_f64(n as f64) } else { R::one() };
                acc(grads, *x, size(*x), |gx| {
                    for o in 0..outer {
                        for j in 0..n {
                            for t in 0..inner {
                                gx[(o * n + j) * inner + t] += g[o * inner + t] * c;
                            }
                        }
                    }
                });
            }
            Op::Gather { table, indices } => {
                let d = self.shape(*table)[1];
                acc(grads, *table, size(*table), |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(grads, *x, size(*x), |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += *b)),
            Op::Permute { x, map } | Op::ReflectPad { x, map } => acc(grads, *x, size(*x), |gx| {
                for (k, &src) in map.iter().enumerate() {
                    gx[src] += g[k];
                }
            }),
        }
        Ok(())
    }
}
