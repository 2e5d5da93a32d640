//! Flat `key = value` run configuration: defaults, then a config file, then
//! `--set` overrides, then dedicated flags. The effective configuration is
//! printed in the same syntax, so any header can be fed back as `--config`.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fino_core::audio::{ClipMode, MfccConfig, MfccExtractor};
use fino_core::model::{ModelConfig, Variant};
use fino_core::synth::{SignalMode, SynthSpec};
use fino_core::train::TrainConfig;
use fino_core::vision::{AugmentConfig, FlipAxis, OcclusionFilter};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Drives synthesis, initialization, splitting, training and sampling.
    pub seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
    /// Defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub threads: usize,
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub occlusion: OcclusionFilter,
    pub depth_max_m: f64,
    /// Coefficient count and `T_a` always follow the model.
    pub mfcc: MfccConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
    /// Share of the training part held out for early stopping; 0 stops on
    /// the test split.
    pub val_fraction: f64,
    pub eval_split: EvalSplit,
    pub fraction: f64,
    pub sweep: bool,
    pub episode: Option<String>,
    pub bench_repetitions: usize,
    /// Empty means `model.variant` only.
    pub bench_variants: Vec<Variant>,
    pub gradcheck_seeds: usize,
    pub gradcheck_max_per_tensor: usize,
    pub gradcheck_full_width: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
            checkpoint: None,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
            occlusion: OcclusionFilter::default(),
            depth_max_m: 2.0,
            mfcc: MfccConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            train_fraction: 0.7,
            val_fraction: 0.0,
            eval_split: EvalSplit::Test,
            fraction: 1.0,
            sweep: false,
            episode: None,
            bench_repetitions: 20,
            bench_variants: Vec::new(),
            gradcheck_seeds: 5,
            gradcheck_max_per_tensor: 250,
            gradcheck_full_width: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| CliError::usage(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::usage(format!("{key}: want true|false, got {v:?}"))),
    }
}

fn parse_hw(key: &str, v: &str) -> CliResult<(usize, usize)> {
    let (h, w) = v
        .split_once('x')
        .ok_or_else(|| CliError::usage(format!("{key}: want HxW, got {v:?}")))?;
    Ok((parse(key, h.trim())?, parse(key, w.trim())?))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn hw(v: (usize, usize)) -> String {
    format!("{}x{}", v.0, v.1)
}

impl RunConfig {
    /// Applies one assignment. Returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, v: &str) -> CliResult<bool> {
        let k = key;
        match key {
            "seed" => self.seed = parse(k, v)?,
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "threads" => self.threads = parse(k, v)?,

            "synth.n_episodes" => self.synth.n_episodes = parse(k, v)?,
            "synth.fail_fraction" => self.synth.fail_fraction = parse(k, v)?,
            "synth.image_hw" => self.synth.image_hw = parse_hw(k, v)?,
            "synth.n_frames" => self.synth.n_frames = parse(k, v)?,
            "synth.audio_seconds" => self.synth.audio_seconds = parse(k, v)?,
            "synth.signal_mode" => self.synth.signal_mode = parse::<SignalMode>(k, v)?,
            "synth.noise_level" => self.synth.noise_level = parse(k, v)?,

            "model.variant" => self.model.variant = parse::<Variant>(k, v)?,
            "model.block_channels" => {
                let c: Vec<usize> = parse_list(k, v)?;
                self.model.block_channels = c
                    .try_into()
                    .map_err(|_| CliError::usage(format!("{k}: want three comma-separated widths, got {v:?}")))?;
            }
            "model.conv_kernel" => self.model.conv_kernel = parse(k, v)?,
            "model.n_mfcc" => self.model.n_mfcc = parse(k, v)?,
            "model.audio_filters" => self.model.audio_filters = parse(k, v)?,
            "model.audio_kernel" => self.model.audio_kernel = parse(k, v)?,
            "model.audio_layers" => self.model.audio_layers = parse(k, v)?,
            "model.fc1_width" => self.model.fc1_width = parse(k, v)?,
            "model.audio_only_fc_width" => self.model.audio_only_fc_width = parse(k, v)?,
            "model.dropout_p" => self.model.dropout_p = parse(k, v)?,
            "model.use_batch_norm" => self.model.use_batch_norm = parse_bool(k, v)?,
            "model.use_dropout" => self.model.use_dropout = parse_bool(k, v)?,
            "model.input_hw" => self.model.input_hw = parse_hw(k, v)?,
            "model.t_a" => self.model.t_a = parse(k, v)?,

            "pipeline.near_threshold_m" => self.occlusion.near_threshold_m = parse(k, v)?,
            "pipeline.max_near_fraction" => self.occlusion.max_near_fraction = parse(k, v)?,
            "pipeline.depth_max_m" => self.depth_max_m = parse(k, v)?,
            "audio.window_ms" => self.mfcc.window_ms = parse(k, v)?,
            "audio.hop_ms" => self.mfcc.hop_ms = parse(k, v)?,
            "audio.n_mels" => self.mfcc.n_mels = parse(k, v)?,
            "audio.clip" => self.mfcc.clip = parse::<ClipMode>(k, v)?,
            "audio.fmin" => self.mfcc.fmin = parse(k, v)?,
            "audio.fmax" => self.mfcc.fmax = parse(k, v)?,
            "augment.jitter_p" => self.augment.jitter_p = parse(k, v)?,
            "augment.flip_p" => self.augment.flip_p = parse(k, v)?,
            "augment.flip_axis" => self.augment.flip_axis = parse::<FlipAxis>(k, v)?,
            "augment.jitter_strength" => self.augment.jitter_strength = parse(k, v)?,
            "augment.max_hue_shift" => self.augment.max_hue_shift = parse(k, v)?,

            "train.learning_rate" => self.train.learning_rate = parse(k, v)?,
            "train.beta1" => self.train.beta1 = parse(k, v)?,
            "train.beta2" => self.train.beta2 = parse(k, v)?,
            "train.adam_eps" => self.train.adam_eps = parse(k, v)?,
            "train.batch_size" => self.train.batch_size = parse(k, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(k, v)?,
            "train.patience" => self.train.patience = parse(k, v)?,
            "train.augment" => self.train.augment = parse_bool(k, v)?,
            "split.train_fraction" => self.train_fraction = parse(k, v)?,
            "split.val_fraction" => self.val_fraction = parse(k, v)?,

            "eval.split" => {
                self.eval_split = match v {
                    "test" => EvalSplit::Test,
                    "all" => EvalSplit::All,
                    _ => return Err(CliError::usage(format!("{k}: want test|all, got {v:?}"))),
                }
            }
            "infer.fraction" => self.fraction = parse(k, v)?,
            "infer.sweep" => self.sweep = parse_bool(k, v)?,
            "infer.episode" => self.episode = (!v.is_empty()).then(|| v.to_string()),
            "bench.repetitions" => self.bench_repetitions = parse(k, v)?,
            "bench.variants" => self.bench_variants = parse_list(k, v)?,
            "gradcheck.seeds" => self.gradcheck_seeds = parse(k, v)?,
            "gradcheck.max_per_tensor" => self.gradcheck_max_per_tensor = parse(k, v)?,
            "gradcheck.full_width" => self.gradcheck_full_width = parse_bool(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let m = &self.model;
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        vec![
            ("seed", self.seed.to_string()),
            ("data", self.data.display().to_string()),
            ("out", self.out.display().to_string()),
            ("checkpoint", path(&self.checkpoint)),
            ("threads", self.threads.to_string()),
            ("synth.n_episodes", s.n_episodes.to_string()),
            ("synth.fail_fraction", s.fail_fraction.to_string()),
            ("synth.image_hw", hw(s.image_hw)),
            ("synth.n_frames", s.n_frames.to_string()),
            ("synth.audio_seconds", s.audio_seconds.to_string()),
            ("synth.signal_mode", s.signal_mode.as_str().into()),
            ("synth.noise_level", s.noise_level.to_string()),
            ("model.variant", m.variant.as_str().into()),
            ("model.block_channels", m.block_channels.map(|c| c.to_string()).join(",")),
            ("model.conv_kernel", m.conv_kernel.to_string()),
            ("model.n_mfcc", m.n_mfcc.to_string()),
            ("model.audio_filters", m.audio_filters.to_string()),
            ("model.audio_kernel", m.audio_kernel.to_string()),
            ("model.audio_layers", m.audio_layers.to_string()),
            ("model.fc1_width", m.fc1_width.to_string()),
            ("model.audio_only_fc_width", m.audio_only_fc_width.to_string()),
            ("model.dropout_p", m.dropout_p.to_string()),
            ("model.use_batch_norm", m.use_batch_norm.to_string()),
            ("model.use_dropout", m.use_dropout.to_string()),
            ("model.input_hw", hw(m.input_hw)),
            ("model.t_a", m.t_a.to_string()),
            ("pipeline.near_threshold_m", self.occlusion.near_threshold_m.to_string()),
            ("pipeline.max_near_fraction", self.occlusion.max_near_fraction.to_string()),
            ("pipeline.depth_max_m", self.depth_max_m.to_string()),
            ("audio.window_ms", self.mfcc.window_ms.to_string()),
            ("audio.hop_ms", self.mfcc.hop_ms.to_string()),
            ("audio.n_mels", self.mfcc.n_mels.to_string()),
            ("audio.clip", match self.mfcc.clip {
                ClipMode::Head => "head".into(),
                ClipMode::Tail => "tail".into(),
            }),
            ("audio.fmin", self.mfcc.fmin.to_string()),
            ("audio.fmax", self.mfcc.fmax.to_string()),
            ("augment.jitter_p", self.augment.jitter_p.to_string()),
            ("augment.flip_p", self.augment.flip_p.to_string()),
            ("augment.flip_axis", self.augment.flip_axis.as_str().into()),
            ("augment.jitter_strength", self.augment.jitter_strength.to_string()),
            ("augment.max_hue_shift", self.augment.max_hue_shift.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.augment", t.augment.to_string()),
            ("split.train_fraction", self.train_fraction.to_string()),
            ("split.val_fraction", self.val_fraction.to_string()),
            ("eval.split", match self.eval_split {
                EvalSplit::Test => "test".into(),
                EvalSplit::All => "all".into(),
            }),
            ("infer.fraction", self.fraction.to_string()),
            ("infer.sweep", self.sweep.to_string()),
            ("infer.episode", self.episode.clone().unwrap_or_default()),
            ("bench.repetitions", self.bench_repetitions.to_string()),
            ("bench.variants", self.bench_variants.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(",")),
            ("gradcheck.seeds", self.gradcheck_seeds.to_string()),
            ("gradcheck.max_per_tensor", self.gradcheck_max_per_tensor.to_string()),
            ("gradcheck.full_width", self.gradcheck_full_width.to_string()),
        ]
    }

    /// Applies `assignments`, reporting every unknown key at once.
    pub fn apply<'a>(&mut self, assignments: impl IntoIterator<Item = (&'a str, &'a str)>) -> CliResult<()> {
        let mut unknown = Vec::new();
        for (k, v) in assignments {
            if !self.set(k, v)? {
                unknown.push(k.to_string());
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let pairs = parse_assignments(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        self.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// Propagates the run seed and checks every section.
    pub fn finalize(&mut self) -> CliResult<()> {
        self.synth.seed = self.seed;
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        if let Some(cap) = std::env::var("FINO_THREADS").ok().filter(|s| !s.is_empty()) {
            let cap: usize = parse("FINO_THREADS", &cap)?;
            self.threads = self.threads.min(cap.max(1));
        }
        self.threads = self.threads.max(1);
        self.train.threads = self.threads;
        self.synth.validate()?;
        self.model.validate()?;
        self.occlusion.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        MfccExtractor::new(self.mfcc_for(&self.model))?;
        if !(self.depth_max_m > 0.0) {
            return Err(CliError::usage(format!("pipeline.depth_max_m {} must be > 0", self.depth_max_m)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::usage(format!("split.train_fraction {} must be in (0, 1)", self.train_fraction)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CliError::usage(format!("split.val_fraction {} must be in [0, 1)", self.val_fraction)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(CliError::usage(format!("infer.fraction {} must be in (0, 1]", self.fraction)));
        }
        if self.bench_repetitions < 10 {
            return Err(CliError::usage(format!("bench.repetitions {} must be at least 10", self.bench_repetitions)));
        }
        if self.gradcheck_seeds == 0 || self.gradcheck_max_per_tensor == 0 {
            return Err(CliError::usage("gradcheck.seeds and gradcheck.max_per_tensor must be positive"));
        }
        Ok(())
    }

    pub fn mfcc_for(&self, model: &ModelConfig) -> MfccConfig {
        MfccConfig { n_coeffs: model.n_mfcc, t_a: model.t_a, ..self.mfcc.clone() }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value, got {raw:?}", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
