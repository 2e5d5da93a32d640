use crate::error::{FinoError, Result};
use crate::model::FinoNetParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..param.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Moment buffers for every tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &FinoNetParams) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(FinoError::Config(format!(
                "learning rate {} must be > 0",
                config.learning_rate
            )));
        }
        let zeros: Vec<Vec<f64>> = params.tensors().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from `grads` (aligned with the model's tensors). Frozen
    /// tensors are skipped. Every gradient is checked before anything is
    /// modified.
    pub fn step(&mut self, params: &mut FinoNetParams, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(FinoError::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if params.is_frozen(i) {
                continue;
            }
            if g.shape() != params.tensor(i).shape() {
                return Err(FinoError::dim(format!(
                    "gradient of {} has shape {:?}, parameter {:?}",
                    params.name(i),
                    g.shape(),
                    params.tensor(i).shape()
                )));
            }
            if let Some(e) = g.first_non_finite() {
                return Err(FinoError::NonFinite(format!(
                    "gradient of {} is {} at element {e}",
                    params.name(i),
                    g.data()[e]
                )));
            }
        }
        self.t += 1;
        for (i, g) in grads.iter().enumerate() {
            if params.is_frozen(i) {
                continue;
            }
            adam_update(params.data_mut(i), g.data(), &mut self.m[i], &mut self.v[i], self.t, &self.config);
        }
        Ok(())
    }
}
