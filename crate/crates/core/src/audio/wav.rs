use std::path::Path;

use super::AudioSignal;
use crate::error::{FinoError, Result};

fn wav_err(path: &Path, reason: impl Into<String>) -> FinoError {
    FinoError::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads 16-bit signed PCM, mono, 16 kHz. Anything else is rejected.
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(
            path,
            format!(
                "expected 16-bit signed PCM, found {:?} with {} bits",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    if spec.channels != 1 {
        return Err(wav_err(path, format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_rate != super::SAMPLE_RATE {
        return Err(wav_err(
            path,
            format!("expected {} Hz, found {} Hz", super::SAMPLE_RATE, spec.sample_rate),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e.to_string()))?;
    AudioSignal::new(samples, spec.sample_rate).map_err(|e| wav_err(path, e.to_string()))
}

pub fn write_wav(path: &Path, signal: &AudioSignal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for &s in &signal.samples {
        writer
            .write_sample(quantize(s))
            .map_err(|e| wav_err(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

/// Inverse of the reader's `v / 32768` scaling; full-scale positive clips.
pub fn quantize(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}
