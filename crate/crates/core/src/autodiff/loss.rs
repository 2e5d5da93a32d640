use super::graph::{Grads, Graph, Op, Var};
use crate::error::{FinoError, Result};
use crate::tensor::Tensor;

pub(crate) struct CrossEntropySaved {
    logits: Var,
    targets: Vec<usize>,
    weights: Vec<f64>,
    probs: Vec<f64>,
}

impl CrossEntropySaved {
    pub(crate) fn backward(&self, g: &[f64], grads: &mut Grads<'_>) {
        let k = self.weights.len();
        let n = self.targets.len();
        if let Some(dz) = grads.acc(self.logits) {
            for (i, &y) in self.targets.iter().enumerate() {
                let scale = g[0] * self.weights[y] / n as f64;
                for j in 0..k {
                    let onehot = if j == y { 1.0 } else { 0.0 };
                    dz[i * k + j] += scale * (self.probs[i * k + j] - onehot);
                }
            }
        }
    }
}

impl Graph {
    /// `mean_i w[y_i] * (logsumexp(z_i) - z_i[y_i])` over the batch.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: &[f64],
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(FinoError::dim(format!("logits shape {shape:?}, want [N, K]")));
        }
        let (n, k) = (shape[0], shape[1]);
        if targets.len() != n {
            return Err(FinoError::dim(format!(
                "{} targets for a batch of {n}",
                targets.len()
            )));
        }
        if class_weights.len() != k {
            return Err(FinoError::dim(format!(
                "{} class weights for {k} classes",
                class_weights.len()
            )));
        }
        if let Some(w) = class_weights.iter().find(|w| !(**w > 0.0)) {
            return Err(FinoError::param(format!("class weight {w} must be > 0")));
        }
        if let Some(&y) = targets.iter().find(|&&y| y >= k) {
            return Err(FinoError::Index(format!("target {y} outside [0, {k})")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
            total += class_weights[y] * (lse - row[y]);
        }
        let loss = Tensor::scalar(total / n as f64);
        self.push(
            loss,
            Op::CrossEntropy(CrossEntropySaved {
                logits,
                targets: targets.to_vec(),
                weights: class_weights.to_vec(),
                probs,
            }),
            &[logits],
        )
    }
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}
