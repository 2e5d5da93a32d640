//! Seeded synthetic episodes whose success/failure cue is confined to the
//! chosen modalities.
//!
//! Scene: a textured table (1.2 m) with a green goal pad and a red object
//! (1.1 m). During the middle third an arm (0.3 m) enters and carries the
//! object; in its inner frames the arm covers most of the view, so the
//! occlusion filter removes them. Success leaves the object on the pad.
//! A visual failure makes it vanish or land away from the pad; an audio
//! failure adds a short loud broadband burst during the middle third.
//! Everything not tied to the label is drawn from label-independent
//! streams, so paired success/fail episodes differ only in their cue.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{quantize, AudioSignal, SAMPLE_RATE};
use crate::error::{FinoError, Result};
use crate::rng::{DetRng, RngState};
use crate::vision::{frame_timestamps, write_episode, DepthFrame, Episode, Label, PhaseAnnotations, RgbFrame};

pub const TABLE_DEPTH_M: f64 = 1.2;
pub const OBJECT_DEPTH_M: f64 = 1.1;
pub const ARM_DEPTH_M: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalMode {
    AudioOnly,
    VisionOnly,
    /// Every failure carries both cues.
    Both,
    /// Each failure carries exactly one cue, audio or vision at even odds.
    Split,
}

impl SignalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalMode::AudioOnly => "audio-only",
            SignalMode::VisionOnly => "vision-only",
            SignalMode::Both => "both",
            SignalMode::Split => "split",
        }
    }
}

impl FromStr for SignalMode {
    type Err = FinoError;

    fn from_str(s: &str) -> Result<Self> {
        [SignalMode::AudioOnly, SignalMode::VisionOnly, SignalMode::Both, SignalMode::Split]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                FinoError::Config(format!("unknown signal mode {s:?}, want audio-only|vision-only|both|split"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_episodes: usize,
    pub fail_fraction: f64,
    /// `(height, width)`.
    pub image_hw: (usize, usize),
    pub n_frames: usize,
    pub audio_seconds: f64,
    pub signal_mode: SignalMode,
    /// Half-width of the uniform background noise: audio in full-scale
    /// units; pixels and depth scaled from it.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_episodes: 200,
            fail_fraction: 0.64,
            image_hw: (56, 56),
            n_frames: 24,
            audio_seconds: 4.0,
            signal_mode: SignalMode::Both,
            noise_level: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FinoError::Config(m));
        if !(self.fail_fraction > 0.0 && self.fail_fraction < 1.0) {
            return bad(format!("fail_fraction {} must be in (0, 1)", self.fail_fraction));
        }
        if self.n_frames < 12 {
            return bad(format!("n_frames {} must be at least 12", self.n_frames));
        }
        let (h, w) = self.image_hw;
        if h < 16 || w < 16 {
            return bad(format!("image {h}x{w} must be at least 16x16"));
        }
        if !(self.audio_seconds >= 1.0) {
            return bad(format!("audio_seconds {} must be at least 1", self.audio_seconds));
        }
        if !(0.0..=0.1).contains(&self.noise_level) {
            return bad(format!("noise_level {} must be in [0, 0.1]", self.noise_level));
        }
        if self.n_episodes == 0 {
            return bad("n_episodes must be positive".into());
        }
        Ok(())
    }

    pub fn n_fail(&self) -> usize {
        (self.fail_fraction * self.n_episodes as f64).round() as usize
    }

    pub fn phase_bounds(&self) -> PhaseAnnotations {
        PhaseAnnotations {
            approach_end: self.n_frames / 3,
            manipulate_end: 2 * self.n_frames / 3,
        }
    }

    /// Frames in which the arm covers enough of the view to be filtered.
    pub fn occluded_frames(&self) -> std::ops::Range<usize> {
        let p = self.phase_bounds();
        p.approach_end + 1..p.manipulate_end - 1
    }
}

/// Which cues a failure episode shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cues {
    pub vision: bool,
    pub audio: bool,
}

/// Placement of the burst in a failure recording, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transient {
    pub start: usize,
    pub len: usize,
}

struct Scene {
    table: [f64; 3],
    start: (f64, f64),
    goal: (f64, f64),
    pad_half: f64,
    radius: f64,
    arm_x: f64,
}

fn streams(spec: &SynthSpec, index: usize) -> (RngState, RngState) {
    let root = RngState::new(spec.seed).derive_str("synth");
    (root.derive_str("scene").derive(index as u64), root.derive_str("cue").derive(index as u64))
}

pub fn cues_for(spec: &SynthSpec, label: Label, index: usize) -> Cues {
    if label == Label::Success {
        return Cues { vision: false, audio: false };
    }
    match spec.signal_mode {
        SignalMode::AudioOnly => Cues { vision: false, audio: true },
        SignalMode::VisionOnly => Cues { vision: true, audio: false },
        SignalMode::Both => Cues { vision: true, audio: true },
        SignalMode::Split => {
            let audio = streams(spec, index).1.derive_str("split").stream().bernoulli(0.5);
            Cues { vision: !audio, audio }
        }
    }
}

fn draw_scene(spec: &SynthSpec, rng: &mut DetRng) -> Scene {
    let (h, w) = (spec.image_hw.0 as f64, spec.image_hw.1 as f64);
    let s = h.min(w);
    Scene {
        table: [
            rng.uniform_in(120.0, 160.0),
            rng.uniform_in(95.0, 125.0),
            rng.uniform_in(65.0, 95.0),
        ],
        start: (rng.uniform_in(0.15, 0.3) * w, rng.uniform_in(0.3, 0.7) * h),
        goal: (rng.uniform_in(0.68, 0.8) * w, rng.uniform_in(0.3, 0.7) * h),
        pad_half: 0.12 * s,
        radius: 0.09 * s,
        arm_x: rng.uniform_in(0.45, 0.55) * w,
    }
}

fn lerp(a: (f64, f64), b: (f64, f64), t: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

/// Renders one episode. Deterministic in `(spec.seed, label, index)`.
pub fn generate_episode(spec: &SynthSpec, label: Label, index: usize) -> Result<Episode> {
    spec.validate()?;
    let (scene_state, cue_state) = streams(spec, index);
    let cues = cues_for(spec, label, index);
    let mut rng = scene_state.derive_str("layout").stream();
    let scene = draw_scene(spec, &mut rng);
    let (h, w) = spec.image_hw;
    let phases = spec.phase_bounds();
    let occluded = spec.occluded_frames();

    // Where the object rests after the manipulation.
    let mut cue_rng = cue_state.derive_str("vision").stream();
    let vanished = cues.vision && cue_rng.bernoulli(0.5);
    let rest = if cues.vision && !vanished {
        let y = if cue_rng.bernoulli(0.5) { 0.15 } else { 0.85 };
        (cue_rng.uniform_in(0.38, 0.55) * w as f64, y * h as f64)
    } else {
        scene.goal
    };

    let mut noise = scene_state.derive_str("pixels").stream();
    let pix = spec.noise_level * 255.0;
    let mut rgb = Vec::with_capacity(spec.n_frames);
    let mut depth = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let in_manip = (phases.approach_end..phases.manipulate_end).contains(&t);
        let progress = if t < phases.approach_end {
            0.0
        } else if in_manip {
            (t - phases.approach_end) as f64 / (phases.manipulate_end - phases.approach_end) as f64
        } else {
            1.0
        };
        let object = if t >= phases.manipulate_end {
            (!vanished).then_some(rest)
        } else {
            Some(lerp(scene.start, rest, progress))
        };
        // A full-height bar; wide while the arm is down inside the view.
        let arm_half = if occluded.contains(&t) {
            0.3 * w as f64
        } else if in_manip {
            0.06 * w as f64
        } else {
            0.0
        };
        let arm_x = if in_manip { object.map_or(scene.arm_x, |o| o.0) } else { scene.arm_x };

        let mut c = vec![0u8; w * h * 3];
        let mut d = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let on_pad = (fx - scene.goal.0).abs() <= scene.pad_half && (fy - scene.goal.1).abs() <= scene.pad_half;
                let on_object = object.is_some_and(|o| (fx - o.0).powi(2) + (fy - o.1).powi(2) <= scene.radius.powi(2));
                let on_arm = arm_half > 0.0 && (fx - arm_x).abs() <= arm_half;
                let (color, z) = if on_arm {
                    ([110.0, 110.0, 115.0], ARM_DEPTH_M)
                } else if on_object {
                    ([205.0, 35.0, 30.0], OBJECT_DEPTH_M)
                } else if on_pad {
                    ([40.0, 170.0, 60.0], TABLE_DEPTH_M)
                } else {
                    (scene.table, TABLE_DEPTH_M)
                };
                let i = y * w + x;
                for k in 0..3 {
                    let v = color[k] + noise.uniform_in(-pix, pix);
                    c[3 * i + k] = v.round().clamp(0.0, 255.0) as u8;
                }
                let z = z + noise.uniform_in(-1.0, 1.0) * spec.noise_level * 0.1;
                // Whole millimeters, as stored on disk.
                d[i] = ((z * 1000.0).round() as u16) as f32 / 1000.0;
            }
        }
        rgb.push(RgbFrame { width: w, height: h, data: c });
        depth.push(DepthFrame { width: w, height: h, data: d });
    }

    let audio = render_audio(spec, scene_state, cue_state, cues.audio)?.0;
    let timestamps = frame_timestamps(spec.n_frames, audio.duration_secs());
    let episode = Episode {
        id: episode_id(index),
        label,
        manipulation: "synthetic".into(),
        rgb,
        depth,
        timestamps,
        audio,
        phases: Some(phases),
        crop_rect: None,
    };
    episode.validate()?;
    Ok(episode)
}

/// Background noise plus, for audio failures, a decaying broadband burst
/// inside the middle third. Samples are quantized to 16-bit levels.
fn render_audio(
    spec: &SynthSpec,
    scene: RngState,
    cue: RngState,
    with_transient: bool,
) -> Result<(AudioSignal, Option<Transient>)> {
    let n = (spec.audio_seconds * SAMPLE_RATE as f64).round() as usize;
    let mut bg = scene.derive_str("audio").stream();
    let a = spec.noise_level;
    let mut samples: Vec<f64> = (0..n).map(|_| bg.uniform_in(-a, a)).collect();
    let mut transient = None;
    if with_transient {
        let mut r = cue.derive_str("audio").stream();
        let sr = SAMPLE_RATE as f64;
        let len = (0.08 * sr) as usize;
        let lo = (spec.audio_seconds / 3.0 + 0.05) * sr;
        let hi = (2.0 * spec.audio_seconds / 3.0 - 0.15) * sr;
        let start = r.uniform_in(lo, hi.max(lo)) as usize;
        let amp = r.uniform_in(0.4, 0.7);
        for k in 0..len.min(n.saturating_sub(start)) {
            let env = (-(k as f64) / (0.03 * sr)).exp();
            samples[start + k] += amp * env * r.uniform_in(-1.0, 1.0);
        }
        transient = Some(Transient { start, len });
    }
    let samples = samples.into_iter().map(|s| quantize(s) as f64 / 32768.0).collect();
    Ok((AudioSignal::new(samples, SAMPLE_RATE)?, transient))
}

/// Where the failure burst of episode `index` sits, if it has one.
pub fn transient_for(spec: &SynthSpec, label: Label, index: usize) -> Result<Option<Transient>> {
    let (scene, cue) = streams(spec, index);
    Ok(render_audio(spec, scene, cue, cues_for(spec, label, index).audio)?.1)
}

pub fn episode_id(index: usize) -> String {
    format!("ep{index:05}")
}

/// Labels of a dataset: exactly `round(fail_fraction * n)` failures at
/// seeded positions.
pub fn dataset_labels(spec: &SynthSpec) -> Vec<Label> {
    let n_fail = spec.n_fail();
    let mut labels: Vec<Label> = (0..spec.n_episodes)
        .map(|i| if i < n_fail { Label::Fail } else { Label::Success })
        .collect();
    RngState::new(spec.seed).derive_str("synth").derive_str("labels").stream().shuffle(&mut labels);
    labels
}

pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<Episode>> {
    spec.validate()?;
    dataset_labels(spec)
        .into_iter()
        .enumerate()
        .map(|(i, label)| generate_episode(spec, label, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub manipulation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub episodes: Vec<ManifestEntry>,
}

/// Generates the dataset into `root` in the episode directory layout plus
/// `manifest.json`.
pub fn write_dataset(spec: &SynthSpec, root: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(root).map_err(|e| FinoError::io(root, e))?;
    let mut entries = Vec::with_capacity(spec.n_episodes);
    for (i, label) in dataset_labels(spec).into_iter().enumerate() {
        // One at a time keeps memory flat for large datasets.
        let ep = generate_episode(spec, label, i)?;
        write_episode(root, &ep)?;
        entries.push(ManifestEntry {
            id: ep.id,
            label,
            manipulation: ep.manipulation,
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        episodes: entries,
    };
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| FinoError::io(&path, e))?;
    Ok(manifest)
}
