use super::graph::{Grads, Graph, Op, Var};
use crate::error::{FinoError, Result};
use crate::tensor::Tensor;

pub(crate) enum PoolSaved {
    /// Each output element routes its gradient to one input element.
    Max { input: Var, argmax: Vec<usize> },
    /// Mean over trailing `extent` elements of each `[n, c]` row.
    Mean { input: Var, extent: usize },
}

impl PoolSaved {
    pub(crate) fn backward(&self, g: &[f64], grads: &mut Grads<'_>) {
        match self {
            PoolSaved::Max { input, argmax } => {
                if let Some(dx) = grads.acc(*input) {
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += g[o];
                    }
                }
            }
            PoolSaved::Mean { input, extent } => {
                if let Some(dx) = grads.acc(*input) {
                    let inv = 1.0 / *extent as f64;
                    for (row, &go) in dx.chunks_mut(*extent).zip(g) {
                        row.iter_mut().for_each(|d| *d += go * inv);
                    }
                }
            }
        }
    }
}

/// (leading dims, reduced extent) for a tensor of rank >= 3 pooled over
/// everything after the first two axes.
fn global_layout(shape: &[usize], what: &str) -> Result<(Vec<usize>, usize)> {
    if shape.len() < 3 {
        return Err(FinoError::dim(format!(
            "{what} needs [N, C, ...spatial], got {shape:?}"
        )));
    }
    Ok((shape[..2].to_vec(), shape[2..].iter().product()))
}

impl Graph {
    /// Max pooling over the last two axes of `[C,H,W]` or `[N,C,H,W]`.
    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 3 {
            return Err(FinoError::dim(format!("max_pool2d input {shape:?}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if window == 0 || stride == 0 {
            return Err(FinoError::param("pool window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(FinoError::dim(format!(
                "pool window {window} exceeds spatial extent {h}x{w}"
            )));
        }
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = base + (oy * stride + dy) * w + ox * stride + dx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let mut out_shape = shape;
        let r = out_shape.len();
        out_shape[r - 2] = oh;
        out_shape[r - 1] = ow;
        self.push(
            Tensor::from_parts(out_shape, out),
            Op::Pool(PoolSaved::Max { input, argmax }),
            &[input],
        )
    }

    /// Argmax routing of a node produced by a max-pooling op.
    pub fn pool_argmax(&self, v: Var) -> Option<&[usize]> {
        match self.op(v) {
            Op::Pool(PoolSaved::Max { argmax, .. }) => Some(argmax),
            _ => None,
        }
    }

    /// `[N, C, ...]` to `[N, C]` by the spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (lead, extent) = global_layout(self.shape(input), "global_avg_pool")?;
        let inv = 1.0 / extent as f64;
        let out: Vec<f64> = self
            .value(input)
            .data()
            .chunks(extent)
            .map(|row| row.iter().sum::<f64>() * inv)
            .collect();
        self.push(
            Tensor::from_parts(lead, out),
            Op::Pool(PoolSaved::Mean { input, extent }),
            &[input],
        )
    }

    /// `[N, C, ...]` to `[N, C]` by the maximum over trailing axes.
    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let (lead, extent) = global_layout(self.shape(input), "global_max_pool")?;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(x.len() / extent);
        let mut argmax = Vec::with_capacity(x.len() / extent);
        for (r, row) in x.chunks(extent).enumerate() {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            argmax.push(r * extent + best);
        }
        self.push(
            Tensor::from_parts(lead, out),
            Op::Pool(PoolSaved::Max { input, argmax }),
            &[input],
        )
    }
}
