use fino_core::audio::AudioSignal;
use fino_core::model::{FinoNetParams, ModelConfig, Variant};
use fino_core::synth::{generate_dataset, generate_episode, SignalMode, SynthSpec};
use fino_core::train::*;
use fino_core::vision::{Episode, Label};
use fino_core::FinoError;

const HW: usize = 16;

fn spec(n: usize, mode: SignalMode, seed: u64) -> SynthSpec {
    SynthSpec {
        n_episodes: n,
        image_hw: (HW, HW),
        n_frames: 12,
        signal_mode: mode,
        seed,
        ..SynthSpec::default()
    }
}

fn setup(variant: Variant) -> (FinoNetParams, Preprocessor) {
    let cfg = ModelConfig::desk(variant, (HW, HW), 128);
    (FinoNetParams::new(&cfg).unwrap(), Preprocessor::for_model(&cfg).unwrap())
}

fn split(ds: &Dataset) -> (Vec<&Episode>, Vec<&Episode>) {
    let (tr, te) = stratified_split(&ds.labels(), 0.7, 0).unwrap();
    (ds.select(&tr), ds.select(&te))
}

fn tiny_cfg(lr: f64, epochs: usize) -> TrainConfig {
    TrainConfig { learning_rate: lr, max_epochs: epochs, patience: epochs, batch_size: 4, ..TrainConfig::default() }
}

#[test]
fn patience_one_stops_after_a_flat_epoch() {
    let ds = Dataset::new(generate_dataset(&spec(16, SignalMode::Both, 1)).unwrap()).unwrap();
    let (tr, te) = split(&ds);
    let (params, prep) = setup(Variant::A);
    let cfg = TrainConfig { patience: 1, ..tiny_cfg(1e-12, 10) };
    let out = train(&tr, &te, params, &prep, &cfg, |_| {}).unwrap();
    assert_eq!(out.history.len(), 2);
    assert!(out.stopped_early);
    assert_eq!(out.best.meta.epoch, 1);
    assert_eq!(out.best.meta.epochs_run, 2);
}

#[test]
fn training_is_bitwise_deterministic() {
    let ds = Dataset::new(generate_dataset(&spec(16, SignalMode::Both, 2)).unwrap()).unwrap();
    let (tr, te) = split(&ds);
    let run = || {
        let (params, prep) = setup(Variant::Rgbda);
        let mut log = Vec::new();
        let out = train(&tr, &te, params, &prep, &tiny_cfg(1e-3, 2), |r| log.push(r.to_string())).unwrap();
        (log, out.best.to_bytes())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert!(a.1 == b.1, "checkpoints differ");
}

#[test]
fn fully_frozen_model_is_untouched() {
    let ds = Dataset::new(generate_dataset(&spec(16, SignalMode::Both, 3)).unwrap()).unwrap();
    let (tr, te) = split(&ds);
    let (mut params, prep) = setup(Variant::Rgbda);
    params.freeze_all(true);
    let before = params.clone();
    let out = train(&tr, &te, params, &prep, &tiny_cfg(1e-2, 2), |_| {}).unwrap();
    let after = &out.best.params;
    for i in 0..before.len() {
        assert!(before.tensor(i).data() == after.tensor(i).data(), "{} changed", before.name(i));
    }
    assert!(before.running_stats().eq(after.running_stats()));
}

#[test]
fn partially_frozen_model_updates_only_trainable() {
    let ds = Dataset::new(generate_dataset(&spec(16, SignalMode::Both, 3)).unwrap()).unwrap();
    let (tr, te) = split(&ds);
    let (mut params, prep) = setup(Variant::Rgbda);
    params.freeze_except(&["head."]);
    let before = params.clone();
    let out = train(&tr, &te, params, &prep, &tiny_cfg(1e-2, 1), |_| {}).unwrap();
    for i in 0..before.len() {
        let same = before.tensor(i).data() == out.best.params.tensor(i).data();
        assert_eq!(same, !before.name(i).starts_with("head."), "{}", before.name(i));
    }
}

#[test]
fn separable_audio_reaches_perfect_f1() {
    let ds = Dataset::new(generate_dataset(&spec(40, SignalMode::AudioOnly, 4)).unwrap()).unwrap();
    let (tr, te) = split(&ds);
    let (params, prep) = setup(Variant::A);
    let cfg = TrainConfig { patience: 6, ..tiny_cfg(1e-3, 30) };
    let out = train(&tr, &te, params, &prep, &cfg, |_| {}).unwrap();
    assert_eq!(out.best_metrics.weighted_f1, 1.0, "{:?}", out.history);
    let (m, _) = evaluate(&out.best.params, &prep, &te, cfg.seed, 1).unwrap();
    assert_eq!(m, out.best_metrics);
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let ds = Dataset::new(generate_dataset(&spec(16, SignalMode::Both, 5)).unwrap()).unwrap();
    let (tr, te) = split(&ds);
    let (params, prep) = setup(Variant::A);
    let err = train(&tr, &te, params, &prep, &tiny_cfg(1e300, 5), |_| {}).unwrap_err();
    assert!(matches!(err, FinoError::Diverged { .. }), "{err}");
}

#[test]
fn evaluation_threads_agree() {
    let ds = Dataset::new(generate_dataset(&spec(10, SignalMode::Both, 6)).unwrap()).unwrap();
    let eps: Vec<&Episode> = ds.episodes.iter().collect();
    let (params, prep) = setup(Variant::Rgbda);
    let one = evaluate(&params, &prep, &eps, 0, 1).unwrap();
    let three = evaluate(&params, &prep, &eps, 0, 3).unwrap();
    assert_eq!(one, three);
}

#[test]
fn full_observation_equals_evaluation() {
    let ds = Dataset::new(generate_dataset(&spec(8, SignalMode::Both, 7)).unwrap()).unwrap();
    let eps: Vec<&Episode> = ds.episodes.iter().collect();
    for variant in [Variant::Rgbda, Variant::Rgb, Variant::A] {
        let (params, prep) = setup(variant);
        let (_, all) = evaluate(&params, &prep, &eps, 11, 1).unwrap();
        for (e, r) in eps.iter().zip(&all) {
            let p = partial_observation_infer(&params, &prep, e, 1.0, 11).unwrap();
            assert_eq!(&p, r);
        }
    }
}

#[test]
fn partial_observation_never_looks_ahead() {
    let ds = Dataset::new(generate_dataset(&spec(6, SignalMode::Both, 8)).unwrap()).unwrap();
    let (params, prep) = setup(Variant::Rgbda);
    for e in &ds.episodes {
        let duration = e.audio.duration_secs();
        for f in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let r = partial_observation_infer(&params, &prep, e, f, 0).unwrap();
            assert!(!r.source_indices.is_empty());
            for &i in &r.source_indices {
                assert!(e.timestamps[i] <= f * duration, "frame {i} at f={f}");
            }
        }
    }
}

#[test]
fn late_audio_burst_is_invisible_early() {
    let s = spec(4, SignalMode::Both, 9);
    let quiet = generate_episode(&s, Label::Success, 0).unwrap();
    let mut loud = quiet.clone();
    let n = loud.audio.samples.len();
    let start = n * 9 / 10;
    let mut samples = loud.audio.samples.clone();
    for (k, x) in samples[start..start + 800].iter_mut().enumerate() {
        *x += 0.6 * (-(k as f64) / 480.0).exp() * if k % 2 == 0 { 1.0 } else { -1.0 };
    }
    loud.audio = AudioSignal::new(samples, loud.audio.sample_rate).unwrap();
    let (params, prep) = setup(Variant::A);
    let a = partial_observation_infer(&params, &prep, &quiet, 0.1, 0).unwrap();
    let b = partial_observation_infer(&params, &prep, &loud, 0.1, 0).unwrap();
    assert_eq!(a.logits, b.logits);
    let a = partial_observation_infer(&params, &prep, &quiet, 1.0, 0).unwrap();
    let b = partial_observation_infer(&params, &prep, &loud, 1.0, 0).unwrap();
    assert_ne!(a.logits, b.logits);
}

#[test]
fn bench_needs_ten_repetitions() {
    let s = spec(4, SignalMode::Both, 10);
    let e = generate_episode(&s, Label::Fail, 0).unwrap();
    let (params, prep) = setup(Variant::A);
    assert!(matches!(bench_inference(&params, &prep, &e, 9, 0), Err(FinoError::Parameter(_))));
    let r = bench_inference(&params, &prep, &e, 10, 0).unwrap();
    assert_eq!(r.samples_ms.len(), 10);
    assert!(r.mean_ms > 0.0 && r.std_ms >= 0.0);
}

#[test]
fn audio_only_variant_is_cheaper() {
    let s = spec(4, SignalMode::Both, 10);
    let e = generate_episode(&s, Label::Fail, 0).unwrap();
    let (a, prep) = setup(Variant::A);
    let (full, _) = setup(Variant::Rgbda);
    let ra = bench_inference(&a, &prep, &e, 10, 0).unwrap();
    let rf = bench_inference(&full, &prep, &e, 10, 0).unwrap();
    assert!(ra.mean_ms < rf.mean_ms, "{} vs {}", ra.mean_ms, rf.mean_ms);
    let again = bench_inference(&full, &prep, &e, 10, 0).unwrap();
    assert_eq!(again.logits, rf.logits);
}

#[test]
fn dataset_rejects_duplicates_and_missing_dirs() {
    let e = generate_episode(&spec(4, SignalMode::Both, 0), Label::Fail, 0).unwrap();
    assert!(matches!(Dataset::new(vec![e.clone(), e]), Err(FinoError::Split(_))));
    let err = Dataset::load(std::path::Path::new("/nonexistent/fino")).unwrap_err();
    assert!(matches!(err, FinoError::Ingestion { .. }));
    assert!(err.to_string().contains("/nonexistent/fino"));
}

#[test]
fn train_config_is_validated() {
    let ds = Dataset::new(generate_dataset(&spec(16, SignalMode::Both, 1)).unwrap()).unwrap();
    let (tr, te) = split(&ds);
    let (params, prep) = setup(Variant::A);
    let cfg = TrainConfig { batch_size: 0, ..tiny_cfg(1e-3, 1) };
    assert!(train(&tr, &te, params, &prep, &cfg, |_| {}).is_err());
}

#[test]
fn batch_loss_ignores_sample_order() {
    use fino_core::autodiff::{Graph, Mode};
    use fino_core::model::{bind_params, forward, ModelInputs};
    use fino_core::rng::RngState;

    let eps = generate_dataset(&spec(6, SignalMode::Both, 12)).unwrap();
    let mut cfg = ModelConfig::desk(Variant::Rgbda, (HW, HW), 128);
    cfg.use_dropout = false;
    let params = FinoNetParams::new(&cfg).unwrap();
    let prep = Preprocessor::for_model(&cfg).unwrap();
    let visual: Vec<_> = eps.iter().map(|e| prep.train_visual(e, RngState::new(1).derive_str(&e.id), false).unwrap()).collect();
    let audio: Vec<_> = eps.iter().map(|e| prep.audio(e, 1.0).unwrap()).collect();
    let loss = |order: &[usize]| {
        let v: Vec<_> = order.iter().map(|&i| &visual[i]).collect();
        let a: Vec<_> = order.iter().map(|&i| &audio[i]).collect();
        let targets: Vec<usize> = order.iter().map(|&i| eps[i].label.class_index()).collect();
        let inputs = ModelInputs::from_samples(Variant::Rgbda, &v, &a).unwrap();
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let mut rng = RngState::new(0).stream();
        let pass = forward(&mut g, &params, &vars, &inputs, Mode::Train, &mut rng).unwrap();
        let l = g.softmax_cross_entropy(pass.logits, &targets, &[1.3, 0.8]).unwrap();
        g.value(l).data()[0]
    };
    let a = loss(&[0, 1, 2, 3, 4, 5]);
    let b = loss(&[4, 2, 5, 0, 3, 1]);
    assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
}
