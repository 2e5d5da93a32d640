//! The network: three conv/conv/convLSTM vision blocks over early-fused
//! RGB-D frames, a 1-D conv audio branch over MFCCs, and a late-fusion
//! fully connected head.
//!
//! The architecture is described by a flat, named layer list
//! ([`Architecture`]) which both the parameter store and the forward pass are
//! built from, so introspecting it describes exactly what runs.

mod arch;
mod check;
mod checkpoint;
mod forward;
mod params;

pub use arch::{Architecture, Layer, LayerKind, ParamInit, ParamSpec};
pub use check::{check_layers, check_model, desk_check_config, LayerCheck};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
pub use forward::{
    bind_params, conv_lstm_step, forward, ConvLstmState, ForwardCtx, ForwardPass, ModelInputs,
};
pub use params::FinoNetParams;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FinoError, Result};

/// Which modalities feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rgb,
    D,
    A,
    Rgbd,
    Rgbda,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Rgb, Variant::D, Variant::A, Variant::Rgbd, Variant::Rgbda];

    pub fn uses_vision(self) -> bool {
        self != Variant::A
    }

    pub fn uses_audio(self) -> bool {
        matches!(self, Variant::A | Variant::Rgbda)
    }

    /// Channels of the `[R, G, B, D]` stack the vision branch reads.
    pub fn vision_channels(self) -> std::ops::Range<usize> {
        match self {
            Variant::Rgb => 0..3,
            Variant::D => 3..4,
            Variant::A => 0..0,
            Variant::Rgbd | Variant::Rgbda => 0..4,
        }
    }

    pub fn input_channels(self) -> Option<usize> {
        self.uses_vision().then(|| self.vision_channels().len())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rgb => "rgb",
            Variant::D => "d",
            Variant::A => "a",
            Variant::Rgbd => "rgbd",
            Variant::Rgbda => "rgbda",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = FinoError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| FinoError::Config(format!("unknown variant {s:?}, want rgb|d|a|rgbd|rgbda")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub block_channels: [usize; 3],
    pub conv_kernel: usize,
    pub n_mfcc: usize,
    pub audio_filters: usize,
    pub audio_kernel: usize,
    /// 2 normally; 1 for the single-layer audio ablation.
    pub audio_layers: usize,
    pub fc1_width: usize,
    /// Hidden width of the head when audio is the only modality.
    pub audio_only_fc_width: usize,
    pub n_classes: usize,
    pub dropout_p: f64,
    pub use_batch_norm: bool,
    pub use_dropout: bool,
    pub input_hw: (usize, usize),
    pub t_a: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Rgbda,
            block_channels: [64, 128, 256],
            conv_kernel: 3,
            n_mfcc: 20,
            audio_filters: 64,
            audio_kernel: 32,
            audio_layers: 2,
            fc1_width: 256,
            audio_only_fc_width: 64,
            n_classes: 2,
            dropout_p: 0.4,
            use_batch_norm: true,
            use_dropout: true,
            input_hw: (224, 224),
            t_a: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Narrow widths that train in seconds per epoch on one CPU core; the
    /// layer structure is unchanged. Dropout is lighter because 0.4 on four
    /// to eight channels leaves the vision branch unable to learn.
    pub fn desk(variant: Variant, input_hw: (usize, usize), t_a: usize) -> ModelConfig {
        ModelConfig {
            variant,
            block_channels: [4, 8, 8],
            audio_filters: 16,
            fc1_width: 32,
            dropout_p: 0.1,
            input_hw,
            t_a,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FinoError::Config(m));
        if self.block_channels.contains(&0) {
            return bad(format!("block_channels {:?} must be positive", self.block_channels));
        }
        if self.conv_kernel == 0 || self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        for (name, v) in [
            ("n_mfcc", self.n_mfcc),
            ("audio_filters", self.audio_filters),
            ("audio_kernel", self.audio_kernel),
            ("fc1_width", self.fc1_width),
            ("audio_only_fc_width", self.audio_only_fc_width),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes {} must be at least 2", self.n_classes));
        }
        if !(1..=2).contains(&self.audio_layers) {
            return bad(format!("audio_layers {} must be 1 or 2", self.audio_layers));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must be in [0, 1)", self.dropout_p));
        }
        if self.variant.uses_vision() {
            let (h, w) = self.input_hw;
            if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
                return bad(format!(
                    "input_hw {h}x{w} must be positive multiples of 8 (three 2x poolings)"
                ));
            }
        }
        if self.variant.uses_audio() {
            let shrink = self.audio_layers * (self.audio_kernel - 1);
            if self.t_a <= shrink {
                return bad(format!(
                    "t_a {} is too short for {} valid convolutions of width {}",
                    self.t_a, self.audio_layers, self.audio_kernel
                ));
            }
        }
        Ok(())
    }

    pub fn vision_width(&self) -> usize {
        if self.variant.uses_vision() {
            self.block_channels[2]
        } else {
            0
        }
    }

    pub fn audio_width(&self) -> usize {
        if self.variant.uses_audio() {
            self.audio_filters
        } else {
            0
        }
    }

    /// Length of the fused feature vector entering the head.
    pub fn concat_width(&self) -> usize {
        self.vision_width() + self.audio_width()
    }
}
