//! Sequence-level augmentation: one decision and one parameter draw per
//! episode, applied identically to every frame.

use serde::{Deserialize, Serialize};

use super::VisualSample;
use crate::error::{FinoError, Result};
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Upside down (rows reversed).
    Vertical,
    /// Mirror (columns reversed).
    Horizontal,
}

impl FlipAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            FlipAxis::Vertical => "vertical",
            FlipAxis::Horizontal => "horizontal",
        }
    }
}

impl std::str::FromStr for FlipAxis {
    type Err = FinoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical" => Ok(FlipAxis::Vertical),
            "horizontal" => Ok(FlipAxis::Horizontal),
            _ => Err(FinoError::Config(format!("unknown flip axis {s:?}, want vertical|horizontal"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub jitter_p: f64,
    pub flip_p: f64,
    pub flip_axis: FlipAxis,
    /// Brightness, contrast and saturation factors are drawn from
    /// `[1 - strength, 1 + strength]`.
    pub jitter_strength: f64,
    /// Hue rotation is drawn from `[-max_hue_shift, max_hue_shift]` turns.
    pub max_hue_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            jitter_p: 0.2,
            flip_p: 0.5,
            flip_axis: FlipAxis::Vertical,
            jitter_strength: 0.2,
            max_hue_shift: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("jitter_p", self.jitter_p), ("flip_p", self.flip_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(FinoError::Config(format!("{name} {p} must be in [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.jitter_strength) {
            return Err(FinoError::Config(format!("jitter_strength {} must be in [0, 1)", self.jitter_strength)));
        }
        if !(0.0..=0.5).contains(&self.max_hue_shift) {
            return Err(FinoError::Config(format!("max_hue_shift {} must be in [0, 0.5]", self.max_hue_shift)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRecord {
    pub jitter: Option<ColorJitter>,
    pub flip: Option<FlipAxis>,
}

impl AugmentRecord {
    pub fn draw(cfg: &AugmentConfig, rng: &mut DetRng) -> Self {
        let jitter = rng.bernoulli(cfg.jitter_p).then(|| {
            let s = cfg.jitter_strength;
            ColorJitter {
                brightness: rng.uniform_in(1.0 - s, 1.0 + s),
                contrast: rng.uniform_in(1.0 - s, 1.0 + s),
                saturation: rng.uniform_in(1.0 - s, 1.0 + s),
                hue: rng.uniform_in(-cfg.max_hue_shift, cfg.max_hue_shift),
            }
        });
        let flip = rng.bernoulli(cfg.flip_p).then_some(cfg.flip_axis);
        AugmentRecord { jitter, flip }
    }

    pub fn apply(&self, sample: &VisualSample) -> VisualSample {
        let mut out = sample.clone();
        let shape = out.frames.shape().to_vec();
        let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let data = out.frames.data_mut();
        if let (Some(j), true) = (self.jitter, c >= 3) {
            for f in 0..t {
                jitter_frame(&mut data[f * c * plane..(f * c + 3) * plane], plane, &j);
            }
        }
        if let Some(axis) = self.flip {
            for p in data.chunks_mut(plane) {
                flip_plane(p, h, w, axis);
            }
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }
}

/// Draws and applies one augmentation for the whole sequence.
pub fn augment_sequence(
    sample: &VisualSample,
    cfg: &AugmentConfig,
    rng: &mut DetRng,
) -> (VisualSample, AugmentRecord) {
    let record = AugmentRecord::draw(cfg, rng);
    (record.apply(sample), record)
}

fn flip_plane(p: &mut [f64], h: usize, w: usize, axis: FlipAxis) {
    match axis {
        FlipAxis::Vertical => {
            for y in 0..h / 2 {
                let (top, bottom) = p.split_at_mut((h - 1 - y) * w);
                top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
        FlipAxis::Horizontal => {
            for row in p.chunks_mut(w) {
                row.reverse();
            }
        }
    }
}

fn gray(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// `rgb` holds three consecutive planes (R, G, B) of `plane` pixels.
fn jitter_frame(rgb: &mut [f64], plane: usize, j: &ColorJitter) {
    let (r, rest) = rgb.split_at_mut(plane);
    let (g, b) = rest.split_at_mut(plane);
    for i in 0..plane {
        r[i] = (r[i] * j.brightness).clamp(0.0, 1.0);
        g[i] = (g[i] * j.brightness).clamp(0.0, 1.0);
        b[i] = (b[i] * j.brightness).clamp(0.0, 1.0);
    }
    let mean = (0..plane).map(|i| gray(r[i], g[i], b[i])).sum::<f64>() / plane as f64;
    for i in 0..plane {
        r[i] = ((r[i] - mean) * j.contrast + mean).clamp(0.0, 1.0);
        g[i] = ((g[i] - mean) * j.contrast + mean).clamp(0.0, 1.0);
        b[i] = ((b[i] - mean) * j.contrast + mean).clamp(0.0, 1.0);
    }
    for i in 0..plane {
        let y = gray(r[i], g[i], b[i]);
        r[i] = ((r[i] - y) * j.saturation + y).clamp(0.0, 1.0);
        g[i] = ((g[i] - y) * j.saturation + y).clamp(0.0, 1.0);
        b[i] = ((b[i] - y) * j.saturation + y).clamp(0.0, 1.0);
    }
    if j.hue != 0.0 {
        for i in 0..plane {
            let (h, s, v) = rgb_to_hsv(r[i], g[i], b[i]);
            let (nr, ng, nb) = hsv_to_rgb((h + j.hue).rem_euclid(1.0), s, v);
            r[i] = nr;
            g[i] = ng;
            b[i] = nb;
        }
    }
}

/// Hue in turns `[0, 1)`.
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}
