use serde::{Deserialize, Serialize};

use super::{CropRect, DepthFrame, Episode, PhaseAnnotations, RgbFrame, VisualSample};
use crate::error::{FinoError, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

pub const FRAMES_PER_PHASE: usize = 4;
pub const SEQ_LEN: usize = 2 * FRAMES_PER_PHASE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionFilter {
    pub near_threshold_m: f64,
    pub max_near_fraction: f64,
}

impl Default for OcclusionFilter {
    fn default() -> Self {
        OcclusionFilter {
            near_threshold_m: 0.5,
            max_near_fraction: 0.2,
        }
    }
}

impl OcclusionFilter {
    pub fn validate(&self) -> Result<()> {
        if !(self.near_threshold_m > 0.0) {
            return Err(FinoError::Config("near_threshold_m must be > 0".into()));
        }
        if !(self.max_near_fraction > 0.0 && self.max_near_fraction <= 1.0) {
            return Err(FinoError::Config("max_near_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_occluded(&self, depth: &DepthFrame) -> bool {
        let near = depth
            .data
            .iter()
            .filter(|&&d| (d as f64) < self.near_threshold_m)
            .count();
        near as f64 / depth.data.len() as f64 > self.max_near_fraction
    }
}

/// Original indices of the frames that survive occlusion filtering, in order.
pub fn filter_occluded(episode: &Episode, filter: &OcclusionFilter) -> Result<Vec<usize>> {
    filter.validate()?;
    let kept: Vec<usize> = (0..episode.n_frames())
        .filter(|&i| !filter.is_occluded(&episode.depth[i]))
        .collect();
    if kept.len() < SEQ_LEN {
        return Err(FinoError::unusable(
            &episode.id,
            format!("only {} of {} frames survive occlusion filtering", kept.len(), episode.n_frames()),
        ));
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phases {
    pub approach: Vec<usize>,
    pub manipulate: Vec<usize>,
    pub retreat: Vec<usize>,
}

/// Splits surviving frame indices into approach / manipulate / retreat.
/// Annotations are frame-index boundaries; without them the frames are cut
/// into contiguous thirds with any remainder going to the earliest phases.
pub fn segment_phases(
    id: &str,
    frames: &[usize],
    annotations: Option<PhaseAnnotations>,
) -> Result<Phases> {
    if frames.len() < 3 {
        return Err(FinoError::unusable(
            id,
            format!("{} frames cannot be split into three phases", frames.len()),
        ));
    }
    Ok(match annotations {
        Some(a) => Phases {
            approach: frames.iter().copied().filter(|&i| i < a.approach_end).collect(),
            manipulate: frames
                .iter()
                .copied()
                .filter(|&i| i >= a.approach_end && i < a.manipulate_end)
                .collect(),
            retreat: frames.iter().copied().filter(|&i| i >= a.manipulate_end).collect(),
        },
        None => {
            let (base, rem) = (frames.len() / 3, frames.len() % 3);
            let first = base + usize::from(rem > 0);
            let second = base + usize::from(rem > 1);
            Phases {
                approach: frames[..first].to_vec(),
                manipulate: frames[first..first + second].to_vec(),
                retreat: frames[first + second..].to_vec(),
            }
        }
    })
}

fn sample_phase(id: &str, name: &str, phase: &[usize], rng: &mut DetRng) -> Result<Vec<usize>> {
    if phase.is_empty() {
        return Err(FinoError::unusable(id, format!("{name} phase is empty")));
    }
    Ok(if phase.len() >= FRAMES_PER_PHASE {
        rng.choose_distinct(phase.len(), FRAMES_PER_PHASE)
            .into_iter()
            .map(|k| phase[k])
            .collect()
    } else {
        (0..FRAMES_PER_PHASE).map(|_| phase[rng.below(phase.len())]).collect()
    })
}

/// Four frames from each of approach and retreat, sorted. Draws are without
/// replacement unless a phase has fewer than four frames.
pub fn sample_frames(id: &str, phases: &Phases, rng: &mut DetRng) -> Result<Vec<usize>> {
    let mut picked = sample_phase(id, "approach", &phases.approach, rng)?;
    picked.extend(sample_phase(id, "retreat", &phases.retreat, rng)?);
    picked.sort_unstable();
    Ok(picked)
}

/// Copies the `rect` window out of a `width x height x channels` plane.
pub fn crop_plane<T: Copy>(
    data: &[T],
    width: usize,
    height: usize,
    channels: usize,
    rect: CropRect,
) -> Result<Vec<T>> {
    if rect.width == 0
        || rect.height == 0
        || rect.x + rect.width > width
        || rect.y + rect.height > height
    {
        return Err(FinoError::Config(format!(
            "crop rect ({}, {}, {}, {}) outside {width}x{height} frame",
            rect.x, rect.y, rect.width, rect.height
        )));
    }
    let mut out = Vec::with_capacity(rect.width * rect.height * channels);
    for y in rect.y..rect.y + rect.height {
        let start = (y * width + rect.x) * channels;
        out.extend_from_slice(&data[start..start + rect.width * channels]);
    }
    Ok(out)
}

/// `[T, 4, H, W]` from cropped RGB (`T` frames of `H*W*3` bytes) and depth
/// (`T` frames of `H*W` meters). Depth is clamped to `[0, depth_max_m]` and
/// divided by `depth_max_m`.
pub fn stack_rgbd(
    rgb: &[Vec<u8>],
    depth: &[Vec<f32>],
    height: usize,
    width: usize,
    depth_max_m: f64,
) -> Result<Tensor> {
    if rgb.len() != depth.len() || rgb.is_empty() {
        return Err(FinoError::dim(format!(
            "{} RGB frames vs {} depth frames",
            rgb.len(),
            depth.len()
        )));
    }
    if !(depth_max_m > 0.0) {
        return Err(FinoError::Config("depth_max_m must be > 0".into()));
    }
    let plane = height * width;
    let mut out = Vec::with_capacity(rgb.len() * 4 * plane);
    for (c, d) in rgb.iter().zip(depth) {
        if c.len() != plane * 3 || d.len() != plane {
            return Err(FinoError::dim("RGB / depth frame size does not match H x W"));
        }
        for ch in 0..3 {
            out.extend((0..plane).map(|p| c[p * 3 + ch] as f64 / 255.0));
        }
        out.extend(d.iter().map(|&v| (v as f64).clamp(0.0, depth_max_m) / depth_max_m));
    }
    Tensor::new(&[rgb.len(), 4, height, width], out)
}

/// Episode-to-sample settings shared by training, evaluation and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionPipeline {
    pub occlusion: OcclusionFilter,
    pub depth_max_m: f64,
    pub input_hw: (usize, usize),
    /// Used when an episode carries no crop rect of its own; `None` centers
    /// an `input_hw` window.
    pub crop_rect: Option<CropRect>,
}

impl Default for VisionPipeline {
    fn default() -> Self {
        VisionPipeline {
            occlusion: OcclusionFilter::default(),
            depth_max_m: 2.0,
            input_hw: (224, 224),
            crop_rect: None,
        }
    }
}

impl VisionPipeline {
    fn crop_for(&self, episode: &Episode) -> Result<CropRect> {
        let rect = episode.crop_rect.or(self.crop_rect);
        let (h, w) = self.input_hw;
        let rect = match rect {
            Some(r) => r,
            None => {
                let (fw, fh) = (episode.rgb[0].width, episode.rgb[0].height);
                if fw < w || fh < h {
                    return Err(FinoError::Config(format!(
                        "{fw}x{fh} frames are smaller than the {w}x{h} input"
                    )));
                }
                CropRect {
                    x: (fw - w) / 2,
                    y: (fh - h) / 2,
                    width: w,
                    height: h,
                }
            }
        };
        if rect.width != w || rect.height != h {
            return Err(FinoError::Config(format!(
                "crop rect is {}x{}, model input is {w}x{h}",
                rect.width, rect.height
            )));
        }
        Ok(rect)
    }

    /// Surviving frames restricted to the leading `fraction` of the timeline.
    pub fn observable_frames(&self, episode: &Episode, fraction: f64) -> Result<Vec<usize>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(FinoError::param(format!("fraction {fraction} outside (0, 1]")));
        }
        let kept = filter_occluded(episode, &self.occlusion)?;
        if fraction >= 1.0 {
            return Ok(kept);
        }
        let horizon = fraction * episode.duration();
        let window: Vec<usize> = kept
            .into_iter()
            .filter(|&i| episode.timestamps[i] <= horizon)
            .collect();
        if window.is_empty() {
            return Err(FinoError::unusable(
                &episode.id,
                format!("no frames within the first {fraction} of the recording"),
            ));
        }
        Ok(window)
    }

    /// Builds the `[8, 4, H, W]` sample. With `fraction < 1` only frames in
    /// the leading part of the timeline are eligible and phases are
    /// recomputed on that range (annotations describe the full recording).
    pub fn prepare(&self, episode: &Episode, fraction: f64, rng: &mut DetRng) -> Result<VisualSample> {
        episode.validate()?;
        let frames = self.observable_frames(episode, fraction)?;
        let annotations = if fraction >= 1.0 { episode.phases } else { None };
        let phases = segment_phases(&episode.id, &frames, annotations)?;
        let picked = sample_frames(&episode.id, &phases, rng)?;
        let rect = self.crop_for(episode)?;
        let mut rgb = Vec::with_capacity(picked.len());
        let mut depth = Vec::with_capacity(picked.len());
        for &i in &picked {
            let c: &RgbFrame = &episode.rgb[i];
            let d: &DepthFrame = &episode.depth[i];
            rgb.push(crop_plane(&c.data, c.width, c.height, 3, rect)?);
            depth.push(crop_plane(&d.data, d.width, d.height, 1, rect)?);
        }
        let frames = stack_rgbd(&rgb, &depth, rect.height, rect.width, self.depth_max_m)?;
        Ok(VisualSample {
            frames,
            source_indices: picked,
        })
    }
}
