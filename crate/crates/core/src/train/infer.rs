use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::Preprocessor;
use crate::autodiff::{softmax, Graph, Mode};
use crate::error::{FinoError, Result};
use crate::model::{bind_params, forward, FinoNetParams, ModelInputs};
use crate::rng::RngState;
use crate::vision::{Episode, Label};

/// Result of one eval-mode forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub id: String,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted: Label,
    /// Frames the vision branch saw (empty for the audio-only variant).
    pub source_indices: Vec<usize>,
    pub fraction: f64,
}

/// Frame-sampling stream for evaluation; depends only on the seed and the
/// episode id, so every evaluation path draws the same frames.
pub fn eval_stream(seed: u64, id: &str) -> RngState {
    RngState::new(seed).derive_str("eval").derive_str(id)
}

/// Eval-mode inputs for the leading `fraction` of an episode.
pub fn eval_inputs(
    params: &FinoNetParams,
    prep: &Preprocessor,
    episode: &Episode,
    fraction: f64,
    seed: u64,
) -> Result<(ModelInputs, Vec<usize>)> {
    let variant = params.config().variant;
    let visual = if variant.uses_vision() {
        let mut rng = eval_stream(seed, &episode.id).stream();
        Some(prep.vision.prepare(episode, fraction, &mut rng)?)
    } else {
        None
    };
    let audio = if variant.uses_audio() {
        Some(prep.audio(episode, fraction)?)
    } else {
        None
    };
    let indices = visual.as_ref().map(|v| v.source_indices.clone()).unwrap_or_default();
    let inputs = ModelInputs::from_samples(
        variant,
        &visual.iter().collect::<Vec<_>>(),
        &audio.iter().collect::<Vec<_>>(),
    )?;
    Ok((inputs, indices))
}

pub fn forward_eval(params: &FinoNetParams, inputs: &ModelInputs) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params);
    // Eval mode never draws from the stream.
    let mut unused = RngState::new(0).stream();
    let pass = forward(&mut g, params, &vars, inputs, Mode::Eval, &mut unused)?;
    Ok(g.value(pass.logits).data().to_vec())
}

/// Inference from the observations up to `fraction` of the episode's
/// duration: frames with timestamps beyond it are never sampled and the
/// audio is cut there before feature extraction. `fraction = 1` is the
/// standard evaluation path.
pub fn partial_observation_infer(
    params: &FinoNetParams,
    prep: &Preprocessor,
    episode: &Episode,
    fraction: f64,
    seed: u64,
) -> Result<Inference> {
    let (inputs, source_indices) = eval_inputs(params, prep, episode, fraction, seed)?;
    let logits = forward_eval(params, &inputs)?;
    let probs = softmax(&crate::tensor::Tensor::new(&[1, logits.len()], logits.clone())?).remove(0);
    let best = (0..logits.len())
        .fold(0, |b, k| if logits[k] > logits[b] { k } else { b });
    Ok(Inference {
        id: episode.id.clone(),
        logits,
        probabilities: probs,
        predicted: Label::from_class_index(best),
        source_indices,
        fraction,
    })
}

/// Runs `f` over `items` on up to `threads` scoped workers, keeping order.
pub(crate) fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Eval-mode predictions over `episodes` and their weighted metrics.
pub fn evaluate(
    params: &FinoNetParams,
    prep: &Preprocessor,
    episodes: &[&Episode],
    seed: u64,
    threads: usize,
) -> Result<(Metrics, Vec<Inference>)> {
    if episodes.is_empty() {
        return Err(FinoError::contract("evaluation set is empty"));
    }
    let results = parallel_map(episodes, threads, |e| partial_observation_infer(params, prep, e, 1.0, seed))?;
    let pairs: Vec<(Label, Label)> = results
        .iter()
        .zip(episodes)
        .map(|(r, e)| (r.predicted, e.label))
        .collect();
    Ok((Metrics::from_pairs(&pairs), results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub mean_ms: f64,
    /// Sample standard deviation.
    pub std_ms: f64,
    pub samples_ms: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Times eval-mode forward passes on one prepared episode, after one
/// untimed warmup pass.
pub fn bench_inference(
    params: &FinoNetParams,
    prep: &Preprocessor,
    episode: &Episode,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repetitions < 10 {
        return Err(FinoError::param(format!(
            "benchmark needs at least 10 repetitions, got {repetitions}"
        )));
    }
    let (inputs, _) = eval_inputs(params, prep, episode, 1.0, seed)?;
    let logits = forward_eval(params, &inputs)?;
    let mut samples_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let again = forward_eval(params, &inputs)?;
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if again != logits {
            return Err(FinoError::contract("repeated forward passes disagree"));
        }
    }
    let n = repetitions as f64;
    let mean_ms = samples_ms.iter().sum::<f64>() / n;
    let var = samples_ms.iter().map(|s| (s - mean_ms).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BenchReport {
        repetitions,
        mean_ms,
        std_ms: var.sqrt(),
        samples_ms,
        logits,
    })
}
