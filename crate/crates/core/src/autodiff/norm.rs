//! Batch normalization over every axis except the channel axis (axis 1).

use super::graph::{Grads, Graph, Mode, Op, Var};
use crate::error::{FinoError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel statistics of one training batch (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
        }
    }

    /// Exponential update; variance is stored unbiased.
    pub fn update(&mut self, batch: &BatchStats) {
        let m = self.momentum;
        let correction = if batch.count > 1 {
            batch.count as f64 / (batch.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - m) * self.mean[c] + m * batch.mean[c];
            self.var[c] = (1.0 - m) * self.var[c] + m * batch.var[c] * correction;
        }
    }
}

pub(crate) struct BatchNormSaved {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    channels: usize,
    inner: usize,
    batch_mode: bool,
}

impl BatchNormSaved {
    pub(crate) fn backward(&self, g: &[f64], grads: &mut Grads<'_>) {
        let values = grads.values;
        let gamma = values[self.gamma.0].data();
        let (c_n, inner) = (self.channels, self.inner);
        let outer = g.len() / (c_n * inner);
        let count = (outer * inner) as f64;
        let mut sum_g = vec![0.0; c_n];
        let mut sum_gx = vec![0.0; c_n];
        for o in 0..outer {
            for c in 0..c_n {
                let base = (o * c_n + c) * inner;
                for i in base..base + inner {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * self.xhat[i];
                }
            }
        }
        if let Some(db) = grads.acc(self.beta) {
            for c in 0..c_n {
                db[c] += sum_g[c];
            }
        }
        if let Some(dg) = grads.acc(self.gamma) {
            for c in 0..c_n {
                dg[c] += sum_gx[c];
            }
        }
        if let Some(dx) = grads.acc(self.input) {
            for o in 0..outer {
                for c in 0..c_n {
                    let base = (o * c_n + c) * inner;
                    let k = gamma[c] * self.inv_std[c];
                    for i in base..base + inner {
                        dx[i] += if self.batch_mode {
                            k * (g[i] - sum_g[c] / count - self.xhat[i] * sum_gx[c] / count)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Train mode normalizes with batch statistics and returns them so the
    /// caller can fold them into `running`; eval mode reads `running` only.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: &RunningStats,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        if !(eps > 0.0) {
            return Err(FinoError::param(format!("batch-norm epsilon {eps} must be > 0")));
        }
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(FinoError::dim(format!("batch_norm input {shape:?}")));
        }
        let c_n = shape[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c_n] {
                return Err(FinoError::dim(format!(
                    "{name} shape {:?}, want [{c_n}]",
                    self.shape(v)
                )));
            }
        }
        if running.mean.len() != c_n || running.var.len() != c_n {
            return Err(FinoError::dim("running stats channel count mismatch"));
        }
        let inner: usize = shape[2..].iter().product();
        let outer = shape[0];
        let count = outer * inner;
        let x = self.value(input).data();
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c_n];
                let mut var = vec![0.0; c_n];
                for o in 0..outer {
                    for c in 0..c_n {
                        let base = (o * c_n + c) * inner;
                        mean[c] += x[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for o in 0..outer {
                    for c in 0..c_n {
                        let base = (o * c_n + c) * inner;
                        var[c] += x[base..base + inner]
                            .iter()
                            .map(|&v| (v - mean[c]) * (v - mean[c]))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running.mean.clone(), running.var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for c in 0..c_n {
                let base = (o * c_n + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (x[i] - mean[c]) * inv_std[c];
                    out[i] = gm[c] * xhat[i] + bt[c];
                }
            }
        }
        let v = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm(BatchNormSaved {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                channels: c_n,
                inner,
                batch_mode: mode == Mode::Train,
            }),
            &[input, gamma, beta],
        )?;
        Ok((v, stats))
    }
}
