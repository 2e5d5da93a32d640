// Oracles are written as index loops to mirror the formulas.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use fino_core::audio::{
    fix_length, frame_signal, hann, mel_log_energies, mfcc, power_spectrum, read_wav, write_wav,
    AudioSignal, ClipMode, MelFilterbank, MfccConfig, MfccExtractor, LOG_FLOOR,
};
use fino_core::rng::RngState;
use fino_core::tensor::Tensor;
use fino_core::FinoError;
use proptest::prelude::*;

fn signal(samples: Vec<f64>) -> AudioSignal {
    AudioSignal::new(samples, 16_000).unwrap()
}

fn random_frames(n: usize, len: usize, seed: u64) -> Tensor {
    let mut r = RngState::new(seed).stream();
    Tensor::uniform(&[n, len], -1.0, 1.0, &mut r).unwrap()
}

/// O(N^2) DFT of the Hann-windowed frame.
fn naive_power(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let w = hann(n);
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * w[t] * a.cos();
                im += x * w[t] * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Triangles built directly from edge frequencies, independent of
/// `MelFilterbank`.
fn reference_filter(m: usize, n_mels: usize) -> Vec<f64> {
    let mel_hi = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
    let edge = |i: usize| 700.0 * (10f64.powf(mel_hi * i as f64 / (n_mels + 1) as f64 / 2595.0) - 1.0);
    let (lo, mid, hi) = (edge(m), edge(m + 1), edge(m + 2));
    (0..257)
        .map(|k| {
            let f = k as f64 * 16000.0 / 512.0;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            w * 2.0 / (hi - lo)
        })
        .collect()
}

fn naive_dct(row: &[f64], n_coeffs: usize) -> Vec<f64> {
    let n = row.len() as f64;
    (0..n_coeffs)
        .map(|k| {
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(i, &x)| x * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                .sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn framing_examples() {
    let f = frame_signal(&signal(vec![0.1; 16_000]), 32, 32).unwrap();
    assert_eq!(f.shape(), &[31, 512]);
    let f = frame_signal(&signal(vec![0.1; 512]), 32, 32).unwrap();
    assert_eq!(f.shape(), &[1, 512]);
    let f = frame_signal(&signal(vec![0.5; 300]), 32, 32).unwrap();
    assert_eq!(f.shape(), &[1, 512]);
    assert!(f.data()[..300].iter().all(|&v| v == 0.5));
    assert!(f.data()[300..].iter().all(|&v| v == 0.0));
    assert!(matches!(AudioSignal::new(vec![], 16_000), Err(FinoError::Input(_))));
}

#[test]
fn power_spectrum_examples_and_dft_oracle() {
    let zero = power_spectrum(&Tensor::zeros(&[1, 512]).unwrap()).unwrap();
    assert_eq!(zero.shape(), &[1, 257]);
    assert!(zero.data().iter().all(|&v| v == 0.0));

    let tone: Vec<f64> = (0..512).map(|t| (2.0 * PI * 1000.0 * t as f64 / 16000.0).sin()).collect();
    let p = power_spectrum(&Tensor::new(&[1, 512], tone).unwrap()).unwrap();
    let argmax = (0..257).max_by(|&a, &b| p.data()[a].total_cmp(&p.data()[b])).unwrap();
    assert_eq!(argmax, 32);

    let frames = random_frames(20, 512, 5);
    let p = power_spectrum(&frames).unwrap();
    for (i, row) in frames.data().chunks(512).enumerate() {
        let want = naive_power(row);
        for k in 0..257 {
            assert!(rel(p.at(&[i, k]), want[k]) < 1e-6, "frame {i} bin {k}");
        }
    }
    assert!(matches!(
        power_spectrum(&Tensor::zeros(&[1, 500]).unwrap()),
        Err(FinoError::Parameter(_))
    ));
}

#[test]
fn parseval_holds_per_frame() {
    let frames = random_frames(5, 512, 9);
    let p = power_spectrum(&frames).unwrap();
    let w = hann(512);
    for (i, row) in frames.data().chunks(512).enumerate() {
        let energy: f64 = row.iter().zip(&w).map(|(x, w)| (x * w).powi(2)).sum();
        let pr = &p.data()[i * 257..(i + 1) * 257];
        let spectral = (pr[0] + pr[256] + 2.0 * pr[1..256].iter().sum::<f64>()) / 512.0;
        assert!(rel(spectral, energy) < 1e-6);
    }
}

#[test]
fn filterbank_properties_and_oracle() {
    let bank = MelFilterbank::new(40, 512, 16000.0, 0.0, 8000.0);
    for m in 0..40 {
        assert!(bank.row(m).iter().all(|&w| w >= 0.0));
        assert!(bank.row(m).iter().any(|&w| w > 0.0), "filter {m} is empty");
    }
    assert!(bank.centers_hz.windows(2).all(|w| w[0] < w[1]));

    let zero = mel_log_energies(&Tensor::zeros(&[2, 257]).unwrap(), &bank).unwrap();
    assert!(zero.data().iter().all(|&v| v == LOG_FLOOR.ln()));

    let ones = mel_log_energies(&Tensor::ones(&[1, 257]).unwrap(), &bank).unwrap();
    for m in 0..40 {
        let want = (reference_filter(m, 40).iter().sum::<f64>() + LOG_FLOOR).ln();
        assert!(rel(ones.data()[m], want) < 1e-6, "filter {m}");
    }

    // Filterbank application on 20 random spectra against the reference triangles.
    let mut r = RngState::new(3).stream();
    for _ in 0..20 {
        let power = Tensor::uniform(&[1, 257], 0.0, 10.0, &mut r).unwrap();
        let got = mel_log_energies(&power, &bank).unwrap();
        for m in 0..40 {
            let e: f64 = reference_filter(m, 40).iter().zip(power.data()).map(|(w, p)| w * p).sum();
            assert!(rel(got.data()[m], (e + LOG_FLOOR).ln()) < 1e-6);
        }
    }
}

#[test]
fn amplitude_scaling_shifts_log_mel_by_2_log_s() {
    let mut r = RngState::new(4).stream();
    let x: Vec<f64> = (0..4096).map(|_| r.uniform_in(-0.3, 0.3)).collect();
    let bank = MelFilterbank::new(40, 512, 16000.0, 0.0, 8000.0);
    let lm = |s: f64| {
        let sig = signal(x.iter().map(|v| v * s).collect());
        mel_log_energies(&power_spectrum(&frame_signal(&sig, 32, 32).unwrap()).unwrap(), &bank).unwrap()
    };
    let (a, b) = (lm(1.0), lm(3.0));
    for (x1, x3) in a.data().iter().zip(b.data()) {
        if *x1 > LOG_FLOOR.ln() + 10.0 {
            assert!(((x3 - x1) - 2.0 * 3f64.ln()).abs() < 1e-6);
        }
    }
}

#[test]
fn dct_examples_and_oracle() {
    let c = mfcc(&Tensor::full(&[1, 40], 2.5).unwrap(), 20).unwrap();
    assert!((c.data()[0] - 2.5 * 40f64.sqrt()).abs() < 1e-9);
    assert!(c.data()[1..].iter().all(|v| v.abs() < 1e-9));
    let z = mfcc(&Tensor::zeros(&[1, 40]).unwrap(), 20).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));

    let rows = random_frames(20, 40, 6);
    let got = mfcc(&rows, 20).unwrap();
    for (i, row) in rows.data().chunks(40).enumerate() {
        let want = naive_dct(row, 20);
        for k in 0..20 {
            assert!(rel(got.at(&[i, k]), want[k]) < 1e-6);
        }
    }
    assert!(matches!(mfcc(&rows, 41), Err(FinoError::Parameter(_))));
}

#[test]
fn fix_length_examples() {
    let feats = Tensor::from_fn(&[300, 20], |i| (i / 20) as f64 + 1.0).unwrap();
    let clipped = fix_length(&feats, 256, ClipMode::Head).unwrap();
    assert_eq!(clipped.coefficients.shape(), &[20, 256]);
    assert_eq!(clipped.coefficients.at(&[0, 255]), 256.0);
    let tail = fix_length(&feats, 256, ClipMode::Tail).unwrap();
    assert_eq!(tail.coefficients.at(&[3, 0]), 45.0);

    let short = Tensor::from_fn(&[100, 20], |i| (i / 20) as f64 + 1.0).unwrap();
    let padded = fix_length(&short, 256, ClipMode::Head).unwrap();
    for k in 0..20 {
        assert_eq!(padded.coefficients.at(&[k, 99]), 100.0);
        assert!((100..256).all(|t| padded.coefficients.at(&[k, t]) == 0.0));
    }

    let exact = Tensor::from_fn(&[256, 20], |i| i as f64).unwrap();
    let same = fix_length(&exact, 256, ClipMode::Head).unwrap();
    for t in 0..256 {
        for k in 0..20 {
            assert_eq!(same.coefficients.at(&[k, t]), exact.at(&[t, k]));
        }
    }
}

#[test]
fn extractor_rejects_bad_configs_and_rates() {
    let bad = MfccConfig {
        n_mels: 10,
        ..MfccConfig::default()
    };
    assert!(matches!(MfccExtractor::new(bad), Err(FinoError::Parameter(_))));
    let ex = MfccExtractor::new(MfccConfig::default()).unwrap();
    let wrong_rate = AudioSignal::new(vec![0.0; 1000], 8000).unwrap();
    assert!(ex.extract(&wrong_rate).is_err());
}

#[test]
fn wav_round_trip_and_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let samples: Vec<f64> = (0..1600).map(|i| ((i as f64 * 0.01).sin() * 16000.0).round() / 32768.0).collect();
    write_wav(&path, &signal(samples.clone())).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.samples, samples);

    let stereo = dir.path().join("s.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
    w.write_sample(0i16).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    let err = read_wav(&stereo).unwrap_err().to_string();
    assert!(err.contains("mono"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_signal_gives_fixed_finite_features(
        len in 1usize..20_000,
        amp in 0.0f64..1.0,
        seed in any::<u64>(),
        t_a in 1usize..300,
    ) {
        let mut r = RngState::new(seed).stream();
        let sig = signal((0..len).map(|_| r.uniform_in(-amp, amp)).collect());
        let ex = MfccExtractor::new(MfccConfig { t_a, ..MfccConfig::default() }).unwrap();
        let f = ex.extract(&sig).unwrap();
        prop_assert_eq!(f.coefficients.shape(), &[20, t_a][..]);
        prop_assert!(f.coefficients.first_non_finite().is_none());
        prop_assert_eq!(ex.extract(&sig).unwrap(), f);
    }
}
