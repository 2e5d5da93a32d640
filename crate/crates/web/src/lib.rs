//! Browser bindings for three pieces of the preprocessing front end:
//! MFCCs of a parameterized signal, the mel filterbank itself, and the
//! frame pipeline (occlusion filter, phase sampling, crop, augmentation)
//! on a synthetic episode. Everything runs on the same code as the CLI.

// `!(x > 0.0)` is the NaN-rejecting form of a positivity check, and the
// numeric kernels index several buffers in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use wasm_bindgen::prelude::*;

use fino_core::audio::{frame_signal, mel_log_energies, mfcc, power_spectrum, AudioSignal, MelFilterbank, MfccConfig};
use fino_core::rng::RngState;
use fino_core::synth::{cues_for, generate_episode, SignalMode, SynthSpec};
use fino_core::vision::{augment_sequence, AugmentConfig, FlipAxis, Label, VisionPipeline};
use fino_core::{FinoError, Result};

const SAMPLE_RATE: u32 = 16_000;

fn js(e: FinoError) -> JsError {
    JsError::new(&e.to_string())
}

/// Log-mel energies and MFCCs, row-major with time as the column.
#[wasm_bindgen]
pub struct Spectrogram {
    n_frames: usize,
    n_mels: usize,
    n_coeffs: usize,
    log_mel: Vec<f64>,
    mfcc: Vec<f64>,
    waveform: Vec<f64>,
}

#[wasm_bindgen]
impl Spectrogram {
    #[wasm_bindgen(getter)]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    #[wasm_bindgen(getter)]
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }
    #[wasm_bindgen(getter)]
    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }
    /// `[n_mels, n_frames]`.
    #[wasm_bindgen(getter)]
    pub fn log_mel(&self) -> Vec<f64> {
        self.log_mel.clone()
    }
    /// `[n_coeffs, n_frames]`.
    #[wasm_bindgen(getter)]
    pub fn mfcc(&self) -> Vec<f64> {
        self.mfcc.clone()
    }
    /// Per-pixel-column peak amplitude, 512 columns.
    #[wasm_bindgen(getter)]
    pub fn waveform(&self) -> Vec<f64> {
        self.waveform.clone()
    }
}

/// Two seconds at 16 kHz: a tone, an optional decaying noise burst at
/// `burst_at` seconds (gain 0 disables it) and uniform background noise.
pub fn test_signal(tone_hz: f64, burst_at: f64, burst_gain: f64, noise: f64, seed: u64) -> Result<AudioSignal> {
    let n = 2 * SAMPLE_RATE as usize;
    let sr = SAMPLE_RATE as f64;
    let mut rng = RngState::new(seed).derive_str("demo-audio").stream();
    let burst_start = (burst_at * sr) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let mut x = 0.3 * (2.0 * std::f64::consts::PI * tone_hz * t).sin() + noise * rng.uniform_in(-1.0, 1.0);
            if burst_gain > 0.0 && i >= burst_start {
                let dt = (i - burst_start) as f64 / sr;
                x += burst_gain * (-dt / 0.03).exp() * rng.uniform_in(-1.0, 1.0);
            }
            x.clamp(-1.0, 1.0)
        })
        .collect();
    AudioSignal::new(samples, SAMPLE_RATE)
}

pub fn spectrogram(cfg: &MfccConfig, signal: &AudioSignal) -> Result<Spectrogram> {
    let frames = frame_signal(signal, cfg.window_ms, cfg.hop_ms)?;
    let window = frames.shape()[1];
    let bank = MelFilterbank::new(cfg.n_mels, window, signal.sample_rate as f64, cfg.fmin, cfg.fmax);
    let log_mel = mel_log_energies(&power_spectrum(&frames)?, &bank)?;
    let coeffs = mfcc(&log_mel, cfg.n_coeffs)?;
    let n_frames = log_mel.shape()[0];
    // Frames-first to bands-first for display.
    let transpose = |t: &fino_core::tensor::Tensor| {
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        (0..cols * rows).map(|i| t.data()[(i % rows) * cols + i / rows]).collect::<Vec<f64>>()
    };
    let (len, columns) = (signal.samples.len(), 512);
    let waveform = (0..columns)
        .map(|c| signal.samples[c * len / columns..((c + 1) * len / columns).max(c * len / columns + 1).min(len)]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs())))
        .collect();
    Ok(Spectrogram {
        n_frames,
        n_mels: cfg.n_mels,
        n_coeffs: cfg.n_coeffs,
        log_mel: transpose(&log_mel),
        mfcc: transpose(&coeffs),
        waveform,
    })
}

#[wasm_bindgen(js_name = spectrogram)]
pub fn spectrogram_js(
    tone_hz: f64,
    burst_at: f64,
    burst_gain: f64,
    noise: f64,
    window_ms: u32,
    n_mels: usize,
    seed: u64,
) -> Result<Spectrogram, JsError> {
    let cfg = MfccConfig { window_ms, hop_ms: window_ms, n_mels, ..MfccConfig::default() };
    let signal = test_signal(tone_hz, burst_at, burst_gain, noise, seed).map_err(js)?;
    spectrogram(&cfg, &signal).map_err(js)
}

/// Triangle weights `[n_mels, n_bins]` and center frequencies.
#[wasm_bindgen]
pub struct Filterbank {
    n_mels: usize,
    n_bins: usize,
    bin_hz: f64,
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
}

#[wasm_bindgen]
impl Filterbank {
    #[wasm_bindgen(getter)]
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }
    #[wasm_bindgen(getter)]
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
    #[wasm_bindgen(getter)]
    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }
    #[wasm_bindgen(getter)]
    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn centers_hz(&self) -> Vec<f64> {
        self.centers_hz.clone()
    }
}

pub fn filterbank(n_mels: usize, fmin: f64, fmax: f64, window_ms: u32) -> Result<Filterbank> {
    if n_mels == 0 || !(0.0 <= fmin && fmin < fmax && fmax <= SAMPLE_RATE as f64 / 2.0) {
        return Err(FinoError::param(format!("need n_mels > 0 and 0 <= fmin < fmax <= 8000, got {n_mels}, {fmin}, {fmax}")));
    }
    let n_fft = SAMPLE_RATE as usize * window_ms as usize / 1000;
    if n_fft < 2 {
        return Err(FinoError::param(format!("window of {window_ms} ms is too short")));
    }
    let bank = MelFilterbank::new(n_mels, n_fft, SAMPLE_RATE as f64, fmin, fmax);
    let weights = (0..n_mels).flat_map(|m| bank.row(m).to_vec()).collect();
    Ok(Filterbank {
        n_mels,
        n_bins: bank.n_bins,
        bin_hz: SAMPLE_RATE as f64 / n_fft as f64,
        weights,
        centers_hz: bank.centers_hz.clone(),
    })
}

#[wasm_bindgen(js_name = filterbank)]
pub fn filterbank_js(n_mels: usize, fmin: f64, fmax: f64, window_ms: u32) -> Result<Filterbank, JsError> {
    filterbank(n_mels, fmin, fmax, window_ms).map_err(js)
}

/// A synthetic episode before and after the frame pipeline, as RGBA
/// images: every raw frame in one row, and the sampled network input with
/// its RGB row above its depth row.
#[wasm_bindgen]
pub struct FrameStrip {
    raw_width: usize,
    raw_height: usize,
    raw_rgba: Vec<u8>,
    sample_width: usize,
    sample_height: usize,
    sample_rgba: Vec<u8>,
    summary: String,
}

#[wasm_bindgen]
impl FrameStrip {
    #[wasm_bindgen(getter)]
    pub fn raw_width(&self) -> usize {
        self.raw_width
    }
    #[wasm_bindgen(getter)]
    pub fn raw_height(&self) -> usize {
        self.raw_height
    }
    #[wasm_bindgen(getter)]
    pub fn raw_rgba(&self) -> Vec<u8> {
        self.raw_rgba.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn sample_width(&self) -> usize {
        self.sample_width
    }
    #[wasm_bindgen(getter)]
    pub fn sample_height(&self) -> usize {
        self.sample_height
    }
    #[wasm_bindgen(getter)]
    pub fn sample_rgba(&self) -> Vec<u8> {
        self.sample_rgba.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

pub struct StripRequest {
    pub seed: u64,
    pub index: usize,
    pub fail: bool,
    pub mode: SignalMode,
    pub augment: AugmentConfig,
}

fn put(img: &mut [u8], width: usize, x: usize, y: usize, rgb: [u8; 3]) {
    let o = (y * width + x) * 4;
    img[o..o + 3].copy_from_slice(&rgb);
    img[o + 3] = 255;
}

pub fn frame_strip(req: &StripRequest) -> Result<FrameStrip> {
    let spec = SynthSpec { image_hw: (56, 56), signal_mode: req.mode, seed: req.seed, ..SynthSpec::default() };
    let label = if req.fail { Label::Fail } else { Label::Success };
    let episode = generate_episode(&spec, label, req.index)?;
    let pipeline = VisionPipeline { input_hw: (48, 48), ..VisionPipeline::default() };

    let (fh, fw) = spec.image_hw;
    let n = episode.n_frames();
    let raw_width = n * fw;
    let mut raw = vec![0u8; raw_width * fh * 4];
    let mut occluded = Vec::new();
    for (i, (frame, depth)) in episode.rgb.iter().zip(&episode.depth).enumerate() {
        let hidden = pipeline.occlusion.is_occluded(depth);
        if hidden {
            occluded.push(i);
        }
        for y in 0..fh {
            for x in 0..fw {
                let p = &frame.data[(y * fw + x) * 3..(y * fw + x) * 3 + 3];
                // Dim frames the occlusion filter drops.
                let rgb = if hidden { [p[0] / 3, p[1] / 3, p[2] / 3] } else { [p[0], p[1], p[2]] };
                put(&mut raw, raw_width, i * fw + x, y, rgb);
            }
        }
    }

    let mut rng = RngState::new(req.seed).derive_str("demo-frames").stream();
    let sample = pipeline.prepare(&episode, 1.0, &mut rng)?;
    let (sample, record) = augment_sequence(&sample, &req.augment, &mut rng);
    let shape = sample.frames.shape();
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let data = sample.frames.data();
    let sample_width = t * w;
    let mut img = vec![0u8; sample_width * 2 * h * 4];
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for f in 0..t {
        let at = |ch: usize, y: usize, x: usize| data[((f * c + ch) * h + y) * w + x];
        for y in 0..h {
            for x in 0..w {
                put(&mut img, sample_width, f * w + x, y, [byte(at(0, y, x)), byte(at(1, y, x)), byte(at(2, y, x))]);
                let d = byte(at(3, y, x));
                put(&mut img, sample_width, f * w + x, h + y, [d, d, d]);
            }
        }
    }

    let cues = cues_for(&spec, label, req.index);
    let jitter = record.jitter.map_or("none".to_string(), |j| {
        format!(
            "brightness {:.2} contrast {:.2} saturation {:.2} hue {:+.3}",
            j.brightness, j.contrast, j.saturation, j.hue
        )
    });
    let summary = format!(
        "{} {} (cues: vision {}, audio {}); occluded frames {:?}; sampled frames {:?}; flip {}; jitter {}",
        episode.id,
        label.as_str(),
        cues.vision,
        cues.audio,
        occluded,
        sample.source_indices,
        record.flip.map_or("none", FlipAxis::as_str),
        jitter
    );
    Ok(FrameStrip {
        raw_width,
        raw_height: fh,
        raw_rgba: raw,
        sample_width,
        sample_height: 2 * h,
        sample_rgba: img,
        summary,
    })
}

#[wasm_bindgen(js_name = frameStrip)]
#[allow(clippy::too_many_arguments)]
pub fn frame_strip_js(
    seed: u64,
    index: usize,
    fail: bool,
    mode: &str,
    flip_p: f64,
    flip_axis: &str,
    jitter_p: f64,
    jitter_strength: f64,
) -> Result<FrameStrip, JsError> {
    let mode: SignalMode = mode.parse().map_err(js)?;
    let flip_axis: FlipAxis = flip_axis.parse().map_err(js)?;
    let augment = AugmentConfig { flip_p, flip_axis, jitter_p, jitter_strength, ..AugmentConfig::default() };
    augment.validate().map_err(js)?;
    frame_strip(&StripRequest { seed, index, fail, mode, augment }).map_err(js)
}
