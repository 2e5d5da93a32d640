//! In-place iterative radix-2 FFT.

use crate::error::{FinoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

pub fn fft_in_place(buf: &mut [Complex]) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(FinoError::param(format!(
            "FFT length {n} is not a power of two"
        )));
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 {
            0
        } else {
            i.reverse_bits() >> (usize::BITS - bits)
        };
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let theta = -2.0 * std::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = (theta * k as f64).sin_cos();
                let a = buf[start + k];
                let b = buf[start + k + len / 2];
                let t = Complex {
                    re: b.re * c - b.im * s,
                    im: b.re * s + b.im * c,
                };
                buf[start + k] = Complex {
                    re: a.re + t.re,
                    im: a.im + t.im,
                };
                buf[start + k + len / 2] = Complex {
                    re: a.re - t.re,
                    im: a.im - t.im,
                };
            }
        }
        len *= 2;
    }
    Ok(())
}

/// One-sided `|X_k|^2`, `k = 0..=n/2`, of a real signal.
pub fn real_power(signal: &[f64]) -> Result<Vec<f64>> {
    let mut buf: Vec<Complex> = signal.iter().map(|&re| Complex { re, im: 0.0 }).collect();
    fft_in_place(&mut buf)?;
    Ok(buf[..signal.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
}
