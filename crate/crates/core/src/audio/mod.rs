//! Audio front end: framing, power spectrum, log-mel energies, MFCCs and
//! fixed-length padding or clipping.

mod fft;
mod mel;
mod wav;

pub use fft::{fft_in_place, real_power, Complex};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use wav::{quantize, read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{FinoError, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(FinoError::Input("empty audio signal".into()));
        }
        if sample_rate == 0 {
            return Err(FinoError::Input("sample rate must be positive".into()));
        }
        Ok(AudioSignal {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// The leading `fraction` of the signal (at least one sample).
    pub fn head_fraction(&self, fraction: f64) -> AudioSignal {
        let n = ((self.samples.len() as f64 * fraction).floor() as usize).clamp(1, self.samples.len());
        AudioSignal {
            samples: self.samples[..n].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Which frames survive when a recording has more than `T_a` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    Head,
    Tail,
}

impl std::str::FromStr for ClipMode {
    type Err = FinoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(ClipMode::Head),
            "tail" => Ok(ClipMode::Tail),
            other => Err(FinoError::Config(format!("clip must be head|tail, got {other:?}"))),
        }
    }
}

/// `n_coeffs x T_a` coefficients, channels first.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccFeatures {
    pub coefficients: Tensor,
}

impl MfccFeatures {
    pub fn n_coeffs(&self) -> usize {
        self.coefficients.shape()[0]
    }
    pub fn n_frames(&self) -> usize {
        self.coefficients.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub window_ms: u32,
    pub hop_ms: u32,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub t_a: usize,
    pub clip: ClipMode,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            window_ms: 32,
            hop_ms: 32,
            n_mels: 40,
            n_coeffs: 20,
            t_a: 256,
            clip: ClipMode::Head,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

/// Splits `signal` into `floor(len / window)` frames (at least one; a signal
/// shorter than one window is zero padded). Trailing partial samples are
/// dropped.
pub fn frame_signal(signal: &AudioSignal, window_ms: u32, hop_ms: u32) -> Result<Tensor> {
    if signal.samples.is_empty() {
        return Err(FinoError::Input("empty audio signal".into()));
    }
    let window = (signal.sample_rate as usize * window_ms as usize) / 1000;
    let hop = (signal.sample_rate as usize * hop_ms as usize) / 1000;
    if window == 0 || hop == 0 {
        return Err(FinoError::param("window and hop must cover at least one sample"));
    }
    let len = signal.samples.len();
    let n_frames = if len < window { 1 } else { (len - window) / hop + 1 };
    let mut data = vec![0.0; n_frames * window];
    for f in 0..n_frames {
        let start = f * hop;
        let end = (start + window).min(len);
        data[f * window..f * window + (end - start)].copy_from_slice(&signal.samples[start..end]);
    }
    Tensor::new(&[n_frames, window], data)
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed one-sided power spectrum of each row.
pub fn power_spectrum(frames: &Tensor) -> Result<Tensor> {
    let (n, len) = (frames.shape()[0], frames.shape()[1]);
    if !len.is_power_of_two() {
        return Err(FinoError::param(format!("frame length {len} is not a power of two")));
    }
    let window = hann(len);
    let bins = len / 2 + 1;
    let mut out = Vec::with_capacity(n * bins);
    let mut buf = vec![0.0; len];
    for row in frames.data().chunks(len) {
        for i in 0..len {
            buf[i] = row[i] * window[i];
        }
        out.extend(real_power(&buf)?);
    }
    Tensor::new(&[n, bins], out)
}

pub fn mel_log_energies(power: &Tensor, bank: &MelFilterbank) -> Result<Tensor> {
    let (n, bins) = (power.shape()[0], power.shape()[1]);
    if bins != bank.n_bins {
        return Err(FinoError::dim(format!(
            "power spectrum has {bins} bins, filterbank expects {}",
            bank.n_bins
        )));
    }
    let mut out = vec![0.0; n * bank.n_mels];
    for (row, o) in power.data().chunks(bins).zip(out.chunks_mut(bank.n_mels)) {
        bank.apply(row, o);
        o.iter_mut().for_each(|e| *e = (*e + LOG_FLOOR).ln());
    }
    Tensor::new(&[n, bank.n_mels], out)
}

/// Orthonormal DCT-II basis, `n_coeffs x n_in`.
pub fn dct_basis(n_in: usize, n_coeffs: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n_coeffs * n_in];
    for k in 0..n_coeffs {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for i in 0..n_in {
            basis[k * n_in + i] = scale
                * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n_in) as f64).cos();
        }
    }
    basis
}

/// First `n_coeffs` orthonormal DCT-II coefficients of each log-mel row.
pub fn mfcc(log_mel: &Tensor, n_coeffs: usize) -> Result<Tensor> {
    let (n, n_mels) = (log_mel.shape()[0], log_mel.shape()[1]);
    if n_mels < n_coeffs {
        return Err(FinoError::param(format!(
            "{n_mels} mel bands cannot yield {n_coeffs} coefficients"
        )));
    }
    let basis = dct_basis(n_mels, n_coeffs);
    let mut out = Vec::with_capacity(n * n_coeffs);
    for row in log_mel.data().chunks(n_mels) {
        for k in 0..n_coeffs {
            out.push(basis[k * n_mels..(k + 1) * n_mels].iter().zip(row).map(|(b, x)| b * x).sum());
        }
    }
    Tensor::new(&[n, n_coeffs], out)
}

/// `[n, C]` frames-first features to `[C, t_a]`, clipping or zero padding in
/// time.
pub fn fix_length(features: &Tensor, t_a: usize, clip: ClipMode) -> Result<MfccFeatures> {
    if t_a == 0 {
        return Err(FinoError::param("T_a must be at least 1"));
    }
    let (n, c) = (features.shape()[0], features.shape()[1]);
    let skip = match clip {
        ClipMode::Head => 0,
        ClipMode::Tail => n.saturating_sub(t_a),
    };
    let mut out = Tensor::zeros(&[c, t_a])?;
    for t in 0..t_a.min(n) {
        for k in 0..c {
            out.set(&[k, t], features.at(&[skip + t, k]));
        }
    }
    Ok(MfccFeatures { coefficients: out })
}

/// The complete signal to `n_coeffs x T_a` pipeline with a cached filterbank.
#[derive(Debug, Clone)]
pub struct MfccExtractor {
    pub config: MfccConfig,
    bank: MelFilterbank,
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Result<Self> {
        if config.n_mels < config.n_coeffs {
            return Err(FinoError::param(format!(
                "n_mels {} < n_coeffs {}",
                config.n_mels, config.n_coeffs
            )));
        }
        if config.n_coeffs == 0 || config.t_a == 0 {
            return Err(FinoError::param("n_coeffs and T_a must be positive"));
        }
        let window = SAMPLE_RATE as usize * config.window_ms as usize / 1000;
        if !window.is_power_of_two() || config.hop_ms == 0 {
            return Err(FinoError::param(format!(
                "window of {} ms ({window} samples) must be a power of two and the hop positive",
                config.window_ms
            )));
        }
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(config.fmin >= 0.0 && config.fmin < config.fmax && config.fmax <= nyquist) {
            return Err(FinoError::param(format!(
                "mel range {}..{} Hz must satisfy 0 <= fmin < fmax <= {nyquist}",
                config.fmin, config.fmax
            )));
        }
        let bank = MelFilterbank::new(config.n_mels, window, SAMPLE_RATE as f64, config.fmin, config.fmax);
        Ok(MfccExtractor { config, bank })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn extract(&self, signal: &AudioSignal) -> Result<MfccFeatures> {
        if signal.sample_rate != SAMPLE_RATE {
            return Err(FinoError::Input(format!(
                "audio must be {SAMPLE_RATE} Hz, got {}",
                signal.sample_rate
            )));
        }
        let frames = frame_signal(signal, self.config.window_ms, self.config.hop_ms)?;
        let power = power_spectrum(&frames)?;
        let log_mel = mel_log_energies(&power, &self.bank)?;
        let coeffs = mfcc(&log_mel, self.config.n_coeffs)?;
        let fixed = fix_length(&coeffs, self.config.t_a, self.config.clip)?;
        fixed.coefficients.check_finite("MFCC features")?;
        Ok(fixed)
    }
}
