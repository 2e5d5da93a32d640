use super::graph::{Grads, Graph, Mode, Op, Var};
use super::kernels::{gemm, Mat};
use crate::error::{FinoError, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

pub(crate) struct LinearSaved {
    input: Var,
    weight: Var,
    bias: Option<Var>,
    n: usize,
    f_in: usize,
    f_out: usize,
}

impl LinearSaved {
    pub(crate) fn backward(&self, g: &[f64], grads: &mut Grads<'_>) {
        let values = grads.values;
        let (n, f_in, f_out) = (self.n, self.f_in, self.f_out);
        if let Some(bias) = self.bias {
            if let Some(db) = grads.acc(bias) {
                for row in g.chunks(f_out) {
                    db.iter_mut().zip(row).for_each(|(d, &x)| *d += x);
                }
            }
        }
        if let Some(dx) = grads.acc(self.input) {
            let w = values[self.weight.0].data();
            gemm(n, f_out, f_in, Mat::rows(g, f_out), Mat::rows(w, f_in), 1.0, dx);
        }
        if let Some(dw) = grads.acc(self.weight) {
            let x = values[self.input.0].data();
            gemm(
                f_out,
                n,
                f_in,
                Mat::transposed(g, f_out),
                Mat::rows(x, f_in),
                1.0,
                dw,
            );
        }
    }
}

pub(crate) struct DropoutSaved {
    input: Var,
    mask: Vec<f64>,
}

impl DropoutSaved {
    pub(crate) fn backward(&self, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(dx) = grads.acc(self.input) {
            for i in 0..g.len() {
                dx[i] += g[i] * self.mask[i];
            }
        }
    }
}

impl Graph {
    /// `input [N, F_in] x weight[F_out, F_in]^T + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(FinoError::dim(format!(
                "linear: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (n, f_in, f_out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            if self.shape(b) != [f_out] {
                return Err(FinoError::dim(format!(
                    "linear bias {:?}, want [{f_out}]",
                    self.shape(b)
                )));
            }
        }
        let mut out = vec![0.0; n * f_out];
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(f_out) {
                row.copy_from_slice(b);
            }
        }
        gemm(
            n,
            f_in,
            f_out,
            Mat::rows(self.value(input).data(), f_in),
            Mat::transposed(self.value(weight).data(), f_in),
            1.0,
            &mut out,
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            Tensor::from_parts(vec![n, f_out], out),
            Op::Linear(LinearSaved {
                input,
                weight,
                bias,
                n,
                f_in,
                f_out,
            }),
            &inputs,
        )
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in train mode and
    /// eval mode is the identity.
    pub fn dropout(&mut self, input: Var, p: f64, mode: Mode, rng: &mut DetRng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(FinoError::param(format!("dropout p = {p}, need 0 <= p < 1")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(out, Op::Dropout(DropoutSaved { input, mask }), &[input])
    }
}
