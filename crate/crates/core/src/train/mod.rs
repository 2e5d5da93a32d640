//! Splitting, class weighting, Adam, the early-stopped training loop,
//! weighted metrics, partial-observation inference, timing and the
//! preprocessed-sample cache.

mod adam;
mod cache;
mod dataset;
mod infer;
mod metrics;
mod split;

pub use adam::{adam_update, Adam, AdamConfig};
pub use cache::{read_cached, write_cached, CachedSample};
pub use dataset::Dataset;
pub use infer::{
    bench_inference, eval_inputs, eval_stream, evaluate, forward_eval, partial_observation_infer,
    BenchReport, Inference,
};
pub use metrics::Metrics;
pub use split::{class_counts, class_weights, stratified_split, stratified_split3};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::audio::{MfccConfig, MfccExtractor, MfccFeatures};
use crate::autodiff::{Graph, Mode};
use crate::error::{FinoError, Result};
use crate::model::{bind_params, forward, Checkpoint, FinoNetParams, ModelConfig, ModelInputs, TrainingMeta};
use crate::rng::RngState;
use crate::vision::{augment_sequence, AugmentConfig, Episode, Label, VisionPipeline, VisualSample};

/// Everything between a raw episode and network inputs.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub vision: VisionPipeline,
    pub mfcc: MfccExtractor,
    pub augment: AugmentConfig,
}

impl Preprocessor {
    /// Default preprocessing sized to a model's inputs.
    pub fn for_model(cfg: &ModelConfig) -> Result<Self> {
        Ok(Preprocessor {
            vision: VisionPipeline { input_hw: cfg.input_hw, ..VisionPipeline::default() },
            mfcc: MfccExtractor::new(MfccConfig { n_coeffs: cfg.n_mfcc, t_a: cfg.t_a, ..MfccConfig::default() })?,
            augment: AugmentConfig::default(),
        })
    }

    /// MFCCs of the leading `fraction` of the recording, padded or clipped
    /// to `T_a` frames.
    pub fn audio(&self, episode: &Episode, fraction: f64) -> Result<MfccFeatures> {
        if fraction >= 1.0 {
            self.mfcc.extract(&episode.audio)
        } else {
            self.mfcc.extract(&episode.audio.head_fraction(fraction))
        }
    }

    /// A freshly sampled (and optionally augmented) training view.
    pub fn train_visual(&self, episode: &Episode, rng: RngState, augment: bool) -> Result<VisualSample> {
        let mut stream = rng.stream();
        let sample = self.vision.prepare(episode, 1.0, &mut stream)?;
        Ok(if augment {
            augment_sequence(&sample, &self.augment, &mut stream).0
        } else {
            sample
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub augment: bool,
    /// Worker threads for evaluation.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            augment: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FinoError::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} must be in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {} must be > 0", self.adam_eps));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.threads == 0 {
            return bad("batch_size, max_epochs, patience and threads must be >= 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={} val_P={} val_R={} val_F1={}",
            self.epoch, self.train_loss, self.val_precision, self.val_recall, self.val_f1
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_metrics: Metrics,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(
    params: &mut FinoNetParams,
    adam: &mut Adam,
    inputs: &ModelInputs,
    targets: &[usize],
    weights: &[f64],
    dropout: RngState,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params);
    let mut rng = dropout.stream();
    let pass = forward(&mut g, params, &vars, inputs, Mode::Train, &mut rng)?;
    let loss = g.softmax_cross_entropy(pass.logits, targets, weights)?;
    let value = g.value(loss).data()[0];
    g.backward(loss)?;
    let grads: Vec<_> = vars.iter().map(|&v| g.grad(v)).collect();
    adam.step(params, &grads)?;
    // A batch-norm layer whose affine parameters are frozen is frozen as a
    // whole, running statistics included.
    for (name, stats) in &pass.bn_stats {
        let gamma = params.index_of(&format!("{name}.gamma"));
        if gamma.is_some_and(|i| !params.is_frozen(i)) {
            if let Some(r) = params.running_mut(name) {
                r.update(stats);
            }
        }
    }
    Ok(value)
}

/// Epoch loop with seeded shuffling, class-weighted loss and early stopping
/// on validation weighted F1. `on_epoch` sees every record as it is made.
pub fn train(
    train_set: &[&Episode],
    val_set: &[&Episode],
    init: FinoNetParams,
    prep: &Preprocessor,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val_set.is_empty() {
        return Err(FinoError::contract("validation set is empty"));
    }
    let labels: Vec<Label> = train_set.iter().map(|e| e.label).collect();
    let weights = class_weights(&labels)?.to_vec();
    let variant = init.config().variant;
    let audio: Vec<MfccFeatures> = if variant.uses_audio() {
        train_set.iter().map(|e| prep.audio(e, 1.0)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let root = RngState::new(cfg.seed).derive_str("train");
    let mut params = init;
    let mut adam = Adam::new(cfg.adam(), &params)?;
    let mut history = Vec::new();
    let mut best: Option<(Checkpoint, Metrics)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let epoch_rng = root.derive(epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        epoch_rng.derive_str("shuffle").stream().shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let visual: Vec<VisualSample> = if variant.uses_vision() {
                batch
                    .iter()
                    .map(|&i| {
                        let e = train_set[i];
                        prep.train_visual(e, epoch_rng.derive_str("sample").derive_str(&e.id), cfg.augment)
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let aud: Vec<&MfccFeatures> = if variant.uses_audio() {
                batch.iter().map(|&i| &audio[i]).collect()
            } else {
                Vec::new()
            };
            let inputs = ModelInputs::from_samples(variant, &visual.iter().collect::<Vec<_>>(), &aud)?;
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i].class_index()).collect();
            let dropout = epoch_rng.derive_str("dropout").derive(b as u64);
            let loss = train_step(&mut params, &mut adam, &inputs, &targets, &weights, dropout)
                .map_err(|e| match e {
                    FinoError::NonFinite(reason) => FinoError::Diverged { epoch, reason },
                    other => other,
                })?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(FinoError::Diverged {
                epoch,
                reason: format!("training loss is {train_loss}"),
            });
        }
        let (metrics, _) = evaluate(&params, prep, val_set, cfg.seed, cfg.threads)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_precision: metrics.weighted_precision,
            val_recall: metrics.weighted_recall,
            val_f1: metrics.weighted_f1,
        };
        on_epoch(&record);
        history.push(record);

        let improved = best.as_ref().is_none_or(|(_, m)| metrics.weighted_f1 > m.weighted_f1);
        if improved {
            let ckpt = Checkpoint {
                params: params.clone(),
                rng: epoch_rng,
                meta: TrainingMeta {
                    epoch,
                    epochs_run: epoch,
                    train_loss: Some(train_loss),
                    val_weighted_f1: Some(metrics.weighted_f1),
                },
            };
            best = Some((ckpt, metrics));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (mut best, best_metrics) = best.expect("at least one epoch ran");
    best.meta.epochs_run = history.len();
    Ok(TrainOutcome {
        best,
        best_metrics,
        history,
        stopped_early,
    })
}
