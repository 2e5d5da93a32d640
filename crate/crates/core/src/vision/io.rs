//! On-disk episode layout:
//!
//! ```text
//! <id>/rgb/000000.png     8-bit RGB
//! <id>/depth/000000.png   16-bit grayscale, millimeters
//! <id>/audio.wav          PCM16 mono 16 kHz
//! <id>/meta.json          {label, manipulation, approach_end?, manipulate_end?, crop_rect?}
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CropRect, DepthFrame, Episode, Label, PhaseAnnotations, RgbFrame};
use crate::audio::{read_wav, write_wav};
use crate::error::{FinoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub label: Label,
    pub manipulation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulate_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_rect: Option<[usize; 4]>,
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> FinoError {
    FinoError::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| FinoError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FinoError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "png") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn decode_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| FinoError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| ingest_err(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ingest_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ingest_err(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn read_rgb(path: &Path) -> Result<RgbFrame> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(ingest_err(
            path,
            format!("expected 8-bit RGB, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    Ok(RgbFrame {
        width: info.width as usize,
        height: info.height as usize,
        data: buf,
    })
}

fn read_depth(path: &Path) -> Result<DepthFrame> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(ingest_err(
            path,
            format!(
                "expected 16-bit grayscale depth, found {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let data = buf
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 1000.0)
        .collect();
    Ok(DepthFrame {
        width: info.width as usize,
        height: info.height as usize,
        data,
    })
}

pub fn load_episode(dir: &Path) -> Result<Episode> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| ingest_err(dir, "episode directory has no usable name"))?
        .to_string();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| FinoError::io(&meta_path, e))?;
    let meta: EpisodeMeta =
        serde_json::from_str(&text).map_err(|e| ingest_err(&meta_path, e.to_string()))?;
    let phases = match (meta.approach_end, meta.manipulate_end) {
        (Some(approach_end), Some(manipulate_end)) => {
            if approach_end > manipulate_end {
                return Err(ingest_err(&meta_path, "approach_end is after manipulate_end"));
            }
            Some(PhaseAnnotations {
                approach_end,
                manipulate_end,
            })
        }
        (None, None) => None,
        (Some(_), None) => return Err(ingest_err(&meta_path, "missing field `manipulate_end`")),
        (None, Some(_)) => return Err(ingest_err(&meta_path, "missing field `approach_end`")),
    };
    let rgb = png_files(&dir.join("rgb"))?
        .iter()
        .map(|p| read_rgb(p))
        .collect::<Result<Vec<_>>>()?;
    let depth = png_files(&dir.join("depth"))?
        .iter()
        .map(|p| read_depth(p))
        .collect::<Result<Vec<_>>>()?;
    if rgb.is_empty() || rgb.len() != depth.len() {
        return Err(ingest_err(
            dir,
            format!("{} RGB frames but {} depth frames", rgb.len(), depth.len()),
        ));
    }
    let audio = read_wav(&dir.join("audio.wav"))?;
    let timestamps = super::frame_timestamps(rgb.len(), audio.duration_secs());
    let episode = Episode {
        id,
        label: meta.label,
        manipulation: meta.manipulation,
        rgb,
        depth,
        timestamps,
        audio,
        phases,
        crop_rect: meta.crop_rect.map(|[x, y, width, height]| CropRect {
            x,
            y,
            width,
            height,
        }),
    };
    episode.validate()?;
    Ok(episode)
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| FinoError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| ingest_err(path, e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| ingest_err(path, e.to_string()))?;
    writer.finish().map_err(|e| ingest_err(path, e.to_string()))
}

/// Writes `episode` under `root/<id>/`. Depth is stored in whole millimeters.
pub fn write_episode(root: &Path, episode: &Episode) -> Result<PathBuf> {
    let dir = root.join(&episode.id);
    for sub in ["rgb", "depth"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| FinoError::io(&d, e))?;
    }
    for (i, (c, d)) in episode.rgb.iter().zip(&episode.depth).enumerate() {
        let name = format!("{i:06}.png");
        write_png(&dir.join("rgb").join(&name), c.width, c.height, png::ColorType::Rgb, png::BitDepth::Eight, &c.data)?;
        let bytes: Vec<u8> = d
            .data
            .iter()
            .flat_map(|&m| ((m as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16).to_be_bytes())
            .collect();
        write_png(&dir.join("depth").join(&name), d.width, d.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)?;
    }
    write_wav(&dir.join("audio.wav"), &episode.audio)?;
    let meta = EpisodeMeta {
        label: episode.label,
        manipulation: episode.manipulation.clone(),
        approach_end: episode.phases.map(|p| p.approach_end),
        manipulate_end: episode.phases.map(|p| p.manipulate_end),
        crop_rect: episode.crop_rect.map(|r| [r.x, r.y, r.width, r.height]),
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text + "\n").map_err(|e| FinoError::io(&meta_path, e))?;
    Ok(dir)
}

/// Subdirectories of `root` holding a `meta.json`, sorted by name.
pub fn list_episode_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| FinoError::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FinoError::io(root, e))?.path();
        if path.is_dir() && path.join("meta.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
