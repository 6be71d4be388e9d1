//! Paired condition/target datasets.
//!
//! A pair list has one `condition_path,target_path` line per sample, paths
//! relative to the list's directory. Conditions are EVF1 files; when a file
//! holds several slices they are summed. Targets are PGM images. Both are
//! resized bilinearly to the model side when needed.

use std::path::Path;

use super::model::CvaeConfig;
use super::CvaeError;
use crate::image::read_pgm;
use crate::representation::{read_evf, resize_bilinear, Encoding};

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub name: String,
    /// `[channels][side][side]`.
    pub condition: Vec<f64>,
    /// `[side][side]`.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedDataset {
    pub side: usize,
    pub condition_channels: usize,
    pub samples: Vec<PairedSample>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check(&self, config: &CvaeConfig) -> Result<(), CvaeError> {
        if self.side != config.input_side || self.condition_channels != config.condition_channels {
            return Err(CvaeError::ShapeMismatch(format!(
                "dataset is {}x{}x{}, model expects {}x{}x{}",
                self.condition_channels,
                self.side,
                self.side,
                config.condition_channels,
                config.input_side,
                config.input_side
            )));
        }
        Ok(())
    }

    /// Concatenated targets and conditions for the given sample indices.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * self.side * self.side);
        let mut c = Vec::with_capacity(idx.len() * self.condition_channels * self.side * self.side);
        for &i in idx {
            x.extend_from_slice(&self.samples[i].target);
            c.extend_from_slice(&self.samples[i].condition);
        }
        (x, c)
    }
}

fn resize_planes(data: &[f64], planes: usize, w: usize, h: usize, side: usize) -> Vec<f64> {
    if w == side && h == side {
        return data.to_vec();
    }
    data.chunks(w * h)
        .take(planes)
        .flat_map(|p| resize_bilinear(p, w, h, side))
        .collect()
}

pub fn load_pairs(list: &Path, side: usize, encoding: Encoding) -> Result<PairedDataset, CvaeError> {
    let io = |p: &Path, e: String| CvaeError::Data(format!("{}: {e}", p.display()));
    let text = std::fs::read_to_string(list).map_err(|e| io(list, e.to_string()))?;
    let base = list.parent().unwrap_or(Path::new(""));
    let mut out = PairedDataset {
        side,
        condition_channels: 0,
        samples: Vec::new(),
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (cp, tp) = line
            .split_once(',')
            .ok_or_else(|| CvaeError::Data(format!("{} line {}: expected condition,target", list.display(), lineno + 1)))?;
        let (cp, tp) = (base.join(cp.trim()), base.join(tp.trim()));
        let bytes = std::fs::read(&cp).map_err(|e| io(&cp, e.to_string()))?;
        let frames = read_evf(&bytes).map_err(|e| io(&cp, e.to_string()))?;
        if frames.steps == 0 {
            return Err(io(&cp, "no slices".into()));
        }
        let plane = frames.channels * frames.height * frames.width;
        let mut summed = vec![0.0; plane];
        for t in 0..frames.steps {
            for (s, v) in summed.iter_mut().zip(frames.frame(t)) {
                *s += v;
            }
        }
        let mut condition = resize_planes(&summed, frames.channels, frames.width, frames.height, side);
        encoding.apply(&mut condition);
        if out.samples.is_empty() {
            out.condition_channels = frames.channels;
        } else if frames.channels != out.condition_channels {
            return Err(io(&cp, format!("{} channels, earlier files have {}", frames.channels, out.condition_channels)));
        }
        let img = read_pgm(&tp).map_err(|e| io(&tp, e.to_string()))?;
        let target = resize_planes(img.data(), 1, img.width(), img.height(), side);
        let name = tp
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.samples.push(PairedSample {
            name,
            condition,
            target,
        });
    }
    Ok(out)
}
