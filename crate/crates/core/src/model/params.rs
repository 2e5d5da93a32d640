use indexmap::IndexMap;

use super::arch::{Architecture, ParamInit, ParamSpec};
use super::ModelConfig;
use crate::autodiff::RunningStats;
use crate::error::{FinoError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// All learnable tensors of one model, a per-tensor freeze mask and the
/// batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FinoNetParams {
    config: ModelConfig,
    arch: Architecture,
    tensors: IndexMap<String, Tensor>,
    frozen: Vec<bool>,
    running: IndexMap<String, RunningStats>,
}

fn init_tensor(spec: &ParamSpec, root: &RngState) -> Result<Tensor> {
    let mut rng = root.derive_str(&spec.name).stream();
    let shape = &spec.shape;
    match spec.init {
        ParamInit::KaimingUniform { fan_in } => {
            let b = (6.0 / fan_in as f64).sqrt();
            Tensor::uniform(shape, -b, b, &mut rng)
        }
        ParamInit::ScaledUniform { fan_in } => {
            let b = 1.0 / (fan_in as f64).sqrt();
            Tensor::uniform(shape, -b, b, &mut rng)
        }
        ParamInit::Zeros => Tensor::zeros(shape),
        ParamInit::Ones => Tensor::ones(shape),
        ParamInit::ForgetBias { hidden } => {
            Tensor::from_fn(shape, |i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
        }
    }
}

impl FinoNetParams {
    /// Freshly initialized parameters, seeded by `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(config);
        let root = RngState::new(config.seed).derive_str("init");
        let mut tensors = IndexMap::new();
        for spec in arch.param_specs() {
            let t = init_tensor(&spec, &root)?;
            tensors.insert(spec.name, t);
        }
        let running = arch
            .batch_norms()
            .into_iter()
            .map(|(name, c)| (name, RunningStats::new(c)))
            .collect();
        Ok(FinoNetParams {
            config: config.clone(),
            frozen: vec![false; tensors.len()],
            arch,
            tensors,
            running,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        self.tensors.get_index(i).expect("parameter index").0
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_vec(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Replaces a tensor's values; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| FinoError::contract(format!("no parameter named {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(FinoError::dim(format!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn data_mut(&mut self, i: usize) -> &mut [f64] {
        self.tensors[i].data_mut()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        self.frozen.fill(frozen);
    }

    /// Sets the flag of every tensor whose name starts with `prefix`;
    /// returns how many matched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut hits = 0;
        for (i, name) in self.tensors.keys().enumerate() {
            if name.starts_with(prefix) {
                self.frozen[i] = frozen;
                hits += 1;
            }
        }
        hits
    }

    /// Freezes everything except tensors under the given prefixes, e.g.
    /// `["block3.lstm", "head"]` to train only the last convLSTM and head.
    pub fn freeze_except(&mut self, trainable: &[&str]) {
        for (i, name) in self.tensors.keys().enumerate() {
            self.frozen[i] = !trainable.iter().any(|p| name.starts_with(p));
        }
    }

    pub fn running(&self, bn: &str) -> Option<&RunningStats> {
        self.running.get(bn)
    }

    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.running.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn running_mut(&mut self, bn: &str) -> Option<&mut RunningStats> {
        self.running.get_mut(bn)
    }

    pub fn set_running(&mut self, bn: &str, stats: RunningStats) -> Result<()> {
        let slot = self
            .running
            .get_mut(bn)
            .ok_or_else(|| FinoError::contract(format!("no batch-norm layer named {bn:?}")))?;
        if slot.mean.len() != stats.mean.len() || slot.var.len() != stats.var.len() {
            return Err(FinoError::dim(format!(
                "running stats for {bn} have {} channels, got {}",
                slot.mean.len(),
                stats.mean.len()
            )));
        }
        *slot = stats;
        Ok(())
    }

    pub(crate) fn set_frozen_mask(&mut self, mask: Vec<bool>) {
        assert_eq!(mask.len(), self.frozen.len());
        self.frozen = mask;
    }
}
