use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use fino_core::autodiff::GradCheck;
use fino_core::model::{
    check_layers, check_model, desk_check_config, load_checkpoint, save_checkpoint, FinoNetParams, ModelConfig,
};
use fino_core::rng::RngState;
use fino_core::synth::write_dataset;
use fino_core::train::{
    bench_inference, eval_inputs, eval_stream, evaluate, partial_observation_infer, stratified_split,
    stratified_split3, train as run_training, write_cached, CachedSample, Dataset, Inference, Metrics,
    Preprocessor,
};
use fino_core::vision::{Episode, Label, VisionPipeline};
use fino_core::{FinoError, Result};

use crate::config::{EvalSplit, RunConfig};
use crate::error::{CliError, CliResult};

fn preprocessor(cfg: &RunConfig, model: &ModelConfig) -> Result<Preprocessor> {
    Ok(Preprocessor {
        vision: VisionPipeline {
            occlusion: cfg.occlusion,
            depth_max_m: cfg.depth_max_m,
            input_hw: model.input_hw,
            crop_rect: None,
        },
        mfcc: fino_core::audio::MfccExtractor::new(cfg.mfcc_for(model))?,
        augment: cfg.augment,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FinoError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| FinoError::Input(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| FinoError::io(path, e))
}

/// Dataset indices per role. With `split.val_fraction = 0` the test split
/// doubles as the early-stopping set.
struct Splits {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn splits(cfg: &RunConfig, ds: &Dataset) -> Result<Splits> {
    let labels = ds.labels();
    if cfg.val_fraction > 0.0 {
        let (train, val, test) = stratified_split3(&labels, cfg.train_fraction, cfg.val_fraction, cfg.seed)?;
        Ok(Splits { train, val, test })
    } else {
        let (train, test) = stratified_split(&labels, cfg.train_fraction, cfg.seed)?;
        Ok(Splits { train, val: test.clone(), test })
    }
}

fn ids(ds: &Dataset, indices: &[usize]) -> Vec<String> {
    indices.iter().map(|&i| ds.episodes[i].id.clone()).collect()
}

/// Episodes scored by eval / infer.
fn scored<'a>(cfg: &RunConfig, ds: &'a Dataset) -> Result<Vec<&'a Episode>> {
    if let Some(id) = &cfg.episode {
        let e = ds
            .find(id)
            .ok_or_else(|| FinoError::Input(format!("episode {id:?} not found under {}", cfg.data.display())))?;
        return Ok(vec![e]);
    }
    Ok(match cfg.eval_split {
        EvalSplit::All => ds.episodes.iter().collect(),
        EvalSplit::Test => ds.select(&splits(cfg, ds)?.test),
    })
}

fn metrics_line(m: &Metrics) -> String {
    format!(
        "weighted P={:.4} R={:.4} F1={:.4} accuracy={:.4} confusion[actual][predicted]={:?}",
        m.weighted_precision, m.weighted_recall, m.weighted_f1, m.accuracy, m.confusion
    )
}

fn prediction_json(inf: &Inference, label: Label) -> serde_json::Value {
    json!({
        "id": inf.id,
        "label": label,
        "predicted": inf.predicted,
        "correct": inf.predicted == label,
        "logits": inf.logits,
        "probabilities": inf.probabilities,
        "source_indices": inf.source_indices,
        "fraction": inf.fraction,
    })
}

pub fn datagen(cfg: &RunConfig) -> CliResult<()> {
    let manifest = write_dataset(&cfg.synth, &cfg.data)?;
    let fail = manifest.episodes.iter().filter(|e| e.label == Label::Fail).count();
    println!(
        "wrote {} episodes ({} fail, {} success) to {}",
        manifest.episodes.len(),
        fail,
        manifest.episodes.len() - fail,
        cfg.data.display()
    );
    Ok(())
}

pub fn preprocess(cfg: &RunConfig) -> CliResult<()> {
    let ds = Dataset::load(&cfg.data)?;
    let prep = preprocessor(cfg, &cfg.model)?;
    let variant = cfg.model.variant;
    let cache_dir = cfg.out.join("cache");
    create_dir(&cache_dir)?;
    let mut report = Vec::with_capacity(ds.len());
    let mut unusable = 0;
    for e in &ds.episodes {
        let visual = if variant.uses_vision() {
            let mut rng = eval_stream(cfg.seed, &e.id).stream();
            match prep.vision.prepare(e, 1.0, &mut rng) {
                Ok(v) => Some(v),
                Err(FinoError::EpisodeUnusable { reason, .. }) => {
                    unusable += 1;
                    println!("{}: unusable: {reason}", e.id);
                    report.push(json!({ "id": e.id, "label": e.label, "frames": e.n_frames(), "unusable": reason }));
                    continue;
                }
                Err(err) => return Err(err.into()),
            }
        } else {
            None
        };
        let mfcc = if variant.uses_audio() { Some(prep.audio(e, 1.0)?) } else { None };
        let kept = e.depth.iter().filter(|d| !prep.vision.occlusion.is_occluded(d)).count();
        let sample = CachedSample {
            id: e.id.clone(),
            label: e.label,
            source_indices: visual.as_ref().map(|v| v.source_indices.clone()).unwrap_or_default(),
            frames: visual.map(|v| v.frames),
            mfcc: mfcc.map(|m| m.coefficients),
        };
        write_cached(&cache_dir.join(format!("{}.sample", e.id)), &sample)?;
        report.push(json!({
            "id": e.id,
            "label": e.label,
            "frames": e.n_frames(),
            "unoccluded_frames": kept,
            "source_indices": sample.source_indices,
            "mfcc_frames": sample.mfcc.as_ref().map(|m| m.shape()[1]),
        }));
    }
    let path = cfg.out.join("preprocess.json");
    write_json(&path, &json!({ "variant": variant, "episodes": report }))?;
    println!(
        "preprocessed {} episodes ({} unusable); samples in {}, report {}",
        ds.len(),
        unusable,
        cache_dir.display(),
        path.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let ds = Dataset::load(&cfg.data)?;
    let sp = splits(cfg, &ds)?;
    let [success, fail] = ds.class_counts();
    println!(
        "dataset: {} episodes ({success} success, {fail} fail); train {}, val {}, test {}{}",
        ds.len(),
        sp.train.len(),
        sp.val.len(),
        sp.test.len(),
        if cfg.val_fraction > 0.0 { "" } else { " (val = test)" }
    );
    let prep = preprocessor(cfg, &cfg.model)?;
    let params = FinoNetParams::new(&cfg.model)?;
    println!("model: {} with {} parameters", cfg.model.variant.as_str(), params.param_count());

    create_dir(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.render()).map_err(|e| FinoError::io(cfg.out.join("config.txt"), e))?;
    let log_path = cfg.out.join("train.log");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| FinoError::io(&log_path, e))?);
    let mut log_err = None;
    let outcome = run_training(&ds.select(&sp.train), &ds.select(&sp.val), params, &prep, &cfg.train, |r| {
        println!("{r}");
        if let Err(e) = writeln!(log, "{r}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(FinoError::io(&log_path, e).into());
    }

    let ckpt_path = cfg.checkpoint_path();
    if let Some(dir) = ckpt_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_checkpoint(&ckpt_path, &outcome.best)?;
    let meta = &outcome.best.meta;
    println!(
        "best epoch {} of {}{}; checkpoint {}",
        meta.epoch,
        meta.epochs_run,
        if outcome.stopped_early { " (early stop)" } else { "" },
        ckpt_path.display()
    );

    let (test, predictions) = evaluate(&outcome.best.params, &prep, &ds.select(&sp.test), cfg.seed, cfg.threads)?;
    println!("test: {}", metrics_line(&test));
    write_json(
        &cfg.out.join("report.json"),
        &json!({
            "variant": cfg.model.variant,
            "param_count": outcome.best.params.param_count(),
            "best": meta,
            "stopped_early": outcome.stopped_early,
            "history": outcome.history,
            "validation": outcome.best_metrics,
            "test": test,
            "test_predictions": predictions,
            "split": {
                "train": ids(&ds, &sp.train),
                "val": ids(&ds, &sp.val),
                "test": ids(&ds, &sp.test),
            },
        }),
    )?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    let ckpt = load_checkpoint(&cfg.checkpoint_path())?;
    let ds = Dataset::load(&cfg.data)?;
    let episodes = scored(cfg, &ds)?;
    let prep = preprocessor(cfg, ckpt.params.config())?;
    let (metrics, predictions) = evaluate(&ckpt.params, &prep, &episodes, cfg.seed, cfg.threads)?;
    for (p, e) in predictions.iter().zip(&episodes) {
        println!("{} label={} predicted={} p_fail={:.4}", p.id, e.label.as_str(), p.predicted.as_str(), p.probabilities[1]);
    }
    println!("{} episodes: {}", episodes.len(), metrics_line(&metrics));
    create_dir(&cfg.out)?;
    let rows: Vec<_> = predictions.iter().zip(&episodes).map(|(p, e)| prediction_json(p, e.label)).collect();
    write_json(
        &cfg.out.join("eval.json"),
        &json!({ "variant": ckpt.params.config().variant, "metrics": metrics, "predictions": rows }),
    )?;
    Ok(())
}

pub fn infer(cfg: &RunConfig) -> CliResult<()> {
    let ckpt = load_checkpoint(&cfg.checkpoint_path())?;
    let ds = Dataset::load(&cfg.data)?;
    let episodes = scored(cfg, &ds)?;
    let prep = preprocessor(cfg, ckpt.params.config())?;
    create_dir(&cfg.out)?;
    if !cfg.sweep {
        let mut rows = Vec::with_capacity(episodes.len());
        for e in &episodes {
            let inf = partial_observation_infer(&ckpt.params, &prep, e, cfg.fraction, cfg.seed)?;
            let row = prediction_json(&inf, e.label);
            println!("{row}");
            rows.push(row);
        }
        write_json(&cfg.out.join("infer.json"), &json!({ "fraction": cfg.fraction, "predictions": rows }))?;
        return Ok(());
    }
    // Too few observable frames at small fractions makes an episode
    // unusable there; it is reported per fraction rather than aborting.
    let mut table = Vec::new();
    for k in 1..=10 {
        let f = k as f64 / 10.0;
        let mut pairs = Vec::new();
        let mut skipped = Vec::new();
        for e in &episodes {
            match partial_observation_infer(&ckpt.params, &prep, e, f, cfg.seed) {
                Ok(inf) => pairs.push((inf.predicted, e.label)),
                Err(FinoError::EpisodeUnusable { .. }) => skipped.push(e.id.clone()),
                Err(err) => return Err(err.into()),
            }
        }
        let m = Metrics::from_pairs(&pairs);
        println!("fraction={f:.1} scored={} skipped={} {}", pairs.len(), skipped.len(), metrics_line(&m));
        table.push(json!({ "fraction": f, "scored": pairs.len(), "skipped": skipped, "metrics": m }));
    }
    write_json(&cfg.out.join("sweep.json"), &json!({ "episodes": episodes.len(), "fractions": table }))?;
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> CliResult<()> {
    const THRESHOLD: f64 = 1e-4;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut record = |what: String, err: f64, checked: usize, kinks: usize| {
        let ok = err < THRESHOLD;
        println!("{} {what}: max rel err {err:.3e} over {checked} elements ({kinks} kinks skipped)", if ok { "ok  " } else { "FAIL" });
        worst = worst.max(err);
        if !ok {
            failures.push(what);
        }
    };
    for seed in cfg.seed..cfg.seed + cfg.gradcheck_seeds as u64 {
        let gc = GradCheck { max_per_tensor: cfg.gradcheck_max_per_tensor, seed: RngState::new(seed), ..GradCheck::default() };
        for c in check_layers(seed, &gc)? {
            record(format!("seed {seed} {}", c.name), c.report.max_rel_err, c.report.checked, c.report.kinks_skipped);
        }
        let model = desk_check_config(cfg.model.variant, seed);
        let r = check_model(&model, 2, &gc)?;
        record(format!("seed {seed} model {} (desk)", model.variant.as_str()), r.max_rel_err, r.checked, r.kinks_skipped);
        if cfg.gradcheck_full_width {
            // Configured widths on a small input so finite differences stay
            // affordable.
            let full = ModelConfig { input_hw: (16, 16), t_a: 64, seed, ..cfg.model.clone() };
            let gc = GradCheck { max_per_tensor: 4, ..gc };
            let r = check_model(&full, 2, &gc)?;
            record(format!("seed {seed} model {} (configured widths)", full.variant.as_str()), r.max_rel_err, r.checked, r.kinks_skipped);
        }
    }
    println!("max rel err {worst:.3e} (threshold {THRESHOLD:e})");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(format!("{} checks above {THRESHOLD:e}: {}", failures.len(), failures.join(", "))))
    }
}

pub fn bench(cfg: &RunConfig) -> CliResult<()> {
    let ds = Dataset::load(&cfg.data)?;
    let episode = match &cfg.episode {
        Some(id) => ds
            .find(id)
            .ok_or_else(|| FinoError::Input(format!("episode {id:?} not found under {}", cfg.data.display())))?,
        None => &ds.episodes[0],
    };
    let models: Vec<FinoNetParams> = match &cfg.checkpoint {
        Some(path) => vec![load_checkpoint(path)?.params],
        None => {
            let variants = if cfg.bench_variants.is_empty() { vec![cfg.model.variant] } else { cfg.bench_variants.clone() };
            variants
                .into_iter()
                .map(|variant| FinoNetParams::new(&ModelConfig { variant, ..cfg.model.clone() }))
                .collect::<Result<_>>()?
        }
    };
    println!("episode {} ({} threads available, timing single-threaded)", episode.id, cfg.threads);
    let mut rows = Vec::new();
    for params in &models {
        let prep = preprocessor(cfg, params.config())?;
        // Surface preprocessing failures before timing.
        eval_inputs(params, &prep, episode, 1.0, cfg.seed)?;
        let r = bench_inference(params, &prep, episode, cfg.bench_repetitions, cfg.seed)?;
        let variant = params.config().variant;
        println!(
            "{:<6} params={:<9} mean={:.3} ms std={:.3} ms reps={}",
            variant.as_str(),
            params.param_count(),
            r.mean_ms,
            r.std_ms,
            r.repetitions
        );
        rows.push(json!({ "variant": variant, "param_count": params.param_count(), "report": r }));
    }
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("bench.json"), &json!({ "episode": episode.id, "results": rows }))?;
    Ok(())
}
