use crate::error::{FinoError, Result};
use crate::tensor::Tensor;

use super::conv::Conv2dSaved;
use super::layers::{DropoutSaved, LinearSaved};
use super::loss::CrossEntropySaved;
use super::norm::BatchNormSaved;
use super::pool::PoolSaved;


/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Activation(Var, Activation),
    Reshape(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Conv2d(Conv2dSaved),
    Pool(PoolSaved),
    BatchNorm(BatchNormSaved),
    Dropout(DropoutSaved),
    Linear(LinearSaved),
    CrossEntropy(CrossEntropySaved),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Activation(_, Activation::Relu) => "relu",
            Op::Activation(_, Activation::Sigmoid) => "sigmoid",
            Op::Activation(_, Activation::Tanh) => "tanh",
            Op::Reshape(..) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Conv2d(..) => "conv2d",
            Op::Pool(..) => "pool",
            Op::BatchNorm(..) => "batch_norm",
            Op::Dropout(..) => "dropout",
            Op::Linear(..) => "linear",
            Op::CrossEntropy(..) => "softmax_cross_entropy",
        }
    }
}

/// Gradient buffers during the reverse sweep.
pub(crate) struct Grads<'a> {
    pub(crate) values: &'a [Tensor],
    bufs: &'a mut [Option<Vec<f64>>],
    tracked: &'a [bool],
}

impl Grads<'_> {
    /// The accumulation buffer for `v`, or `None` when `v` is not tracked.
    pub(crate) fn acc(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.tracked[v.0] {
            return None;
        }
        let len = self.values[v.0].len();
        Some(self.bufs[v.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

/// Tape of executed operations. Nodes are appended in execution order, so
/// the tape is topologically sorted and the reverse sweep is a single
/// backwards pass over it.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    tracked: Vec<bool>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, t: Tensor, tracked: bool) -> Var {
        self.values.push(t);
        self.tracked.push(tracked);
        self.ops.push(Op::Leaf);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        value.check_finite(&format!("output of {}", op.name()))?;
        let tracked = inputs.iter().any(|v| self.tracked[v.0]);
        self.values.push(value);
        self.tracked.push(tracked);
        self.ops.push(op);
        self.grads.push(None);
        Ok(Var(self.values.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    pub(crate) fn op(&self, v: Var) -> &Op {
        &self.ops[v.0]
    }

    /// Gradient of the last `backward` target with respect to `v`; zeros for
    /// nodes the target does not depend on.
    pub fn grad(&self, v: Var) -> Tensor {
        let value = &self.values[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(value.shape().to_vec(), g.clone()),
            None => Tensor::from_parts(value.shape().to_vec(), vec![0.0; value.len()]),
        }
    }

    /// Fingerprint of every non-differentiable branch decision taken so far:
    /// relu input signs and max-pool winners. Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            hash ^= x;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for op in &self.ops {
            match op {
                Op::Activation(a, Activation::Relu) => {
                    for &v in self.values[a.0].data() {
                        feed((v > 0.0) as u64);
                    }
                }
                Op::Pool(PoolSaved::Max { argmax, .. }) => {
                    for &i in argmax {
                        feed(i as u64);
                    }
                }
                _ => {}
            }
        }
        hash
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(FinoError::contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.tracked[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let ops = &self.ops;
        let mut grads = Grads {
            values: &self.values,
            bufs: &mut self.grads,
            tracked: &self.tracked,
        };
        for id in (0..=loss.0).rev() {
            if !grads.tracked[id] {
                continue;
            }
            let Some(g) = grads.bufs[id].take() else {
                continue;
            };
            backprop(&ops[id], Var(id), &g, &mut grads);
            grads.bufs[id] = Some(g);
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(FinoError::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.values[a.0].map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.values[a.0].sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let out = self.values[a.0].map(|x| match act {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        });
        self.push(out, Op::Activation(a, act), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.values[a.0].clone().reshape(shape)?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = &self.values[a.0];
        let shape = t.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(FinoError::dim(format!(
                "slice [{start}, {}) of axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, extent, inner) = split_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::from_parts(out_shape, data);
        self.push(out, Op::Slice { input: a, axis, start }, &[a])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| FinoError::dim("concat of nothing"))?;
        let ref_shape = self.values[first.0].shape().to_vec();
        if axis >= ref_shape.len() {
            return Err(FinoError::dim(format!("concat axis {axis} for {ref_shape:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.values[v.0].shape();
            let compatible = s.len() == ref_shape.len()
                && s.iter()
                    .zip(&ref_shape)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(FinoError::dim(format!(
                    "concat along {axis}: {s:?} incompatible with {ref_shape:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&ref_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = &self.values[v.0];
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out_shape = ref_shape;
        out_shape[axis] = total;
        let out = Tensor::from_parts(out_shape, data);
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// (product of dims before `axis`, dim at `axis`, product of dims after).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn backprop(op: &Op, out: Var, g: &[f64], grads: &mut Grads<'_>) {
    let values = grads.values;
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(da) = grads.acc(v) {
                    add_into(da, g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = grads.acc(*a) {
                add_into(da, g);
            }
            if let Some(db) = grads.acc(*b) {
                db.iter_mut().zip(g).for_each(|(d, &x)| *d -= x);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (values[a.0].data(), values[b.0].data());
            if let Some(da) = grads.acc(*a) {
                for i in 0..g.len() {
                    da[i] += g[i] * vb[i];
                }
            }
            if let Some(db) = grads.acc(*b) {
                for i in 0..g.len() {
                    db[i] += g[i] * va[i];
                }
            }
        }
        Op::Scale(a, f) => {
            if let Some(da) = grads.acc(*a) {
                da.iter_mut().zip(g).for_each(|(d, &x)| *d += f * x);
            }
        }
        Op::Sum(a) => {
            if let Some(da) = grads.acc(*a) {
                da.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Activation(a, act) => {
            let x = values[a.0].data();
            let y = values[out.0].data();
            if let Some(da) = grads.acc(*a) {
                for i in 0..g.len() {
                    let local = match act {
                        Activation::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Activation::Sigmoid => y[i] * (1.0 - y[i]),
                        Activation::Tanh => 1.0 - y[i] * y[i],
                    };
                    da[i] += g[i] * local;
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = grads.acc(*a) {
                add_into(da, g);
            }
        }
        Op::Slice { input, axis, start } => {
            let in_shape = values[input.0].shape();
            let out_len = values[out.0].shape()[*axis];
            let (outer, extent, inner) = split_axis(in_shape, *axis);
            if let Some(da) = grads.acc(*input) {
                for o in 0..outer {
                    let src = o * out_len * inner;
                    let dst = (o * extent + start) * inner;
                    add_into(&mut da[dst..dst + out_len * inner], &g[src..src + out_len * inner]);
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let out_shape = values[out.0].shape();
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            for v in inputs {
                let extent = values[v.0].shape()[*axis];
                if let Some(dv) = grads.acc(*v) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * extent * inner;
                        add_into(
                            &mut dv[dst..dst + extent * inner],
                            &g[src..src + extent * inner],
                        );
                    }
                }
                offset += extent;
            }
        }
        Op::Conv2d(saved) => saved.backward(g, grads),
        Op::Pool(saved) => saved.backward(g, grads),
        Op::BatchNorm(saved) => saved.backward(g, grads),
        Op::Dropout(saved) => saved.backward(g, grads),
        Op::Linear(saved) => saved.backward(g, grads),
        Op::CrossEntropy(saved) => saved.backward(g, grads),
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
