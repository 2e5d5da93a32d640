//! Episodes and the visual preprocessing chain: occlusion filtering, phase
//! segmentation, approach/retreat frame sampling, table cropping, RGB-D
//! stacking and sequence-level augmentation.

mod augment;
mod io;
mod preprocess;

pub use augment::{augment_sequence, AugmentConfig, AugmentRecord, ColorJitter, FlipAxis};
pub use io::{list_episode_dirs, load_episode, write_episode, EpisodeMeta};
pub use preprocess::{
    crop_plane, filter_occluded, sample_frames, segment_phases, stack_rgbd, OcclusionFilter,
    Phases, VisionPipeline, FRAMES_PER_PHASE, SEQ_LEN,
};

use serde::{Deserialize, Serialize};

use crate::audio::AudioSignal;
use crate::error::{FinoError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Success,
    Fail,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Success, Label::Fail];

    pub fn class_index(self) -> usize {
        match self {
            Label::Success => 0,
            Label::Fail => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Label {
        if i == 0 {
            Label::Success
        } else {
            Label::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Success => "success",
            Label::Fail => "fail",
        }
    }
}

/// 8-bit RGB, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Depth in meters, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAnnotations {
    /// First frame index of the manipulate phase.
    pub approach_end: usize,
    /// First frame index of the retreat phase.
    pub manipulate_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// One manipulation recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub label: Label,
    pub manipulation: String,
    pub rgb: Vec<RgbFrame>,
    pub depth: Vec<DepthFrame>,
    /// Seconds from the start of the recording, one per frame.
    pub timestamps: Vec<f64>,
    pub audio: AudioSignal,
    pub phases: Option<PhaseAnnotations>,
    pub crop_rect: Option<CropRect>,
}

impl Episode {
    pub fn n_frames(&self) -> usize {
        self.rgb.len()
    }

    /// Total recording length; frames are assumed to tile the audio.
    pub fn duration(&self) -> f64 {
        self.audio.duration_secs()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(FinoError::unusable(&self.id, reason));
        if self.rgb.is_empty() || self.depth.is_empty() {
            return bad("empty RGB or depth stream".into());
        }
        if self.rgb.len() != self.depth.len() || self.rgb.len() != self.timestamps.len() {
            return bad(format!(
                "{} RGB frames, {} depth frames, {} timestamps",
                self.rgb.len(),
                self.depth.len(),
                self.timestamps.len()
            ));
        }
        let (w, h) = (self.rgb[0].width, self.rgb[0].height);
        for (i, (c, d)) in self.rgb.iter().zip(&self.depth).enumerate() {
            if c.width != w || c.height != h || d.width != w || d.height != h {
                return bad(format!("frame {i} size differs from frame 0 ({w}x{h})"));
            }
            if c.data.len() != w * h * 3 || d.data.len() != w * h {
                return bad(format!("frame {i} buffer length does not match its size"));
            }
        }
        if self.timestamps.windows(2).any(|t| t[1] < t[0]) {
            return bad("timestamps are not time ordered".into());
        }
        Ok(())
    }
}

/// Frame times when `n` frames evenly tile a recording of `duration` seconds.
pub fn frame_timestamps(n: usize, duration: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * duration / n as f64).collect()
}

/// Network-ready visual input: `[8, 4, H, W]` with channels R, G, B, depth.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualSample {
    pub frames: Tensor,
    pub source_indices: Vec<usize>,
}
