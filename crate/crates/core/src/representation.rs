//! Two-channel event frames and fixed-size network inputs.
//!
//! A frame counts, per pixel, the events of each polarity inside a time
//! window: channel 0 holds `p = +1`, channel 1 holds `p = -1`. A clip is
//! tiled into back-to-back windows anchored at its first event, each frame is
//! cropped to the face box and bilinearly resized to a square side.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventError, EventStream, SensorGeometry, TimeWindow};

/// Default slice length, 33 ms.
pub const DEFAULT_SLICE_US: u64 = 33_000;
/// Default crop side in pixels.
pub const DEFAULT_CROP_SIDE: usize = 64;

pub const EVF_MAGIC: &[u8; 4] = b"EVF1";

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ReprError {
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("stream has no events")]
    EmptyStream,
    #[error("slice duration must be at least 1 us")]
    InvalidSliceDuration,
    #[error("box {x0},{y0} {w}x{h} does not fit inside {width}x{height}")]
    BoxOutOfBounds {
        x0: u32,
        y0: u32,
        w: u32,
        h: u32,
        width: u16,
        height: u16,
    },
    #[error("crop target side must be at least 1")]
    InvalidTarget,
    #[error("got {boxes} boxes for {slices} slices")]
    BoxCountMismatch { boxes: usize, slices: usize },
    #[error("bad EVF1 data: {0}")]
    BadDenseFile(String),
    #[error("unknown encoding {0:?} (expected raw, binary or unit-max)")]
    UnknownEncoding(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFrame {
    pub geometry: SensorGeometry,
    pub window: TimeWindow,
    /// `[2][height][width]`, row-major.
    counts: Vec<u32>,
}

impl EventFrame {
    pub fn zeros(geometry: SensorGeometry, window: TimeWindow) -> Self {
        let n = 2 * geometry.width() as usize * geometry.height() as usize;
        Self {
            geometry,
            window,
            counts: vec![0; n],
        }
    }

    pub fn width(&self) -> usize {
        self.geometry.width() as usize
    }

    pub fn height(&self) -> usize {
        self.geometry.height() as usize
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> u32 {
        self.counts[(channel * self.height() + y) * self.width() + x]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn channel(&self, channel: usize) -> &[u32] {
        let plane = self.width() * self.height();
        &self.counts[channel * plane..(channel + 1) * plane]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Count in-window events per pixel and polarity.
pub fn accumulate(stream: &EventStream, window: TimeWindow) -> EventFrame {
    let mut frame = EventFrame::zeros(stream.geometry().clone(), window);
    let (w, h) = (frame.width(), frame.height());
    for e in &stream.events()[stream.window_range(window)] {
        frame.counts[(e.p.channel() * h + e.y as usize) * w + e.x as usize] += 1;
    }
    frame
}

/// Contiguous equal-length frames covering a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<EventFrame>,
    pub slice_duration: u64,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.frames.iter().map(EventFrame::total).sum()
    }
}

/// Number of slices needed to cover `[first, last]` with windows of
/// `slice_duration` anchored at `first`.
pub fn slice_count(first: u64, last: u64, slice_duration: u64) -> usize {
    ((last - first) / slice_duration + 1) as usize
}

pub fn build_sequence(
    stream: &EventStream,
    slice_duration: u64,
) -> Result<FrameSequence, ReprError> {
    if slice_duration == 0 {
        return Err(ReprError::InvalidSliceDuration);
    }
    let (first, last) = match (stream.first_timestamp(), stream.last_timestamp()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(ReprError::EmptyStream),
    };
    let steps = slice_count(first, last, slice_duration);
    let frames = (0..steps)
        .map(|i| {
            let start = first + i as u64 * slice_duration;
            let window = TimeWindow::new(start, start + slice_duration)?;
            Ok(accumulate(stream, window))
        })
        .collect::<Result<Vec<_>, EventError>>()?;
    Ok(FrameSequence {
        frames,
        slice_duration,
    })
}

/// Axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn full(geometry: &SensorGeometry) -> Self {
        Self {
            x0: 0,
            y0: 0,
            w: geometry.width() as u32,
            h: geometry.height() as u32,
        }
    }

    pub fn check(&self, geometry: &SensorGeometry) -> Result<(), ReprError> {
        let fits = self.w >= 1
            && self.h >= 1
            && self.x0 as u64 + self.w as u64 <= geometry.width() as u64
            && self.y0 as u64 + self.h as u64 <= geometry.height() as u64;
        if fits {
            Ok(())
        } else {
            Err(ReprError::BoxOutOfBounds {
                x0: self.x0,
                y0: self.y0,
                w: self.w,
                h: self.h,
                width: geometry.width(),
                height: geometry.height(),
            })
        }
    }
}

impl FromStr for BoundingBox {
    type Err = String;

    /// `x,y,w,h`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<u32> = s
            .split(',')
            .map(|p| p.trim().parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("bad box {s:?}: {e}"))?;
        match parts[..] {
            [x0, y0, w, h] => Ok(Self { x0, y0, w, h }),
            _ => Err(format!("bad box {s:?}: expected x,y,w,h")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub bbox: BoundingBox,
    pub target: usize,
}

impl CropSpec {
    pub fn new(bbox: BoundingBox, target: usize) -> Result<Self, ReprError> {
        if target == 0 {
            return Err(ReprError::InvalidTarget);
        }
        Ok(Self { bbox, target })
    }

    pub fn full_frame(geometry: &SensorGeometry, target: usize) -> Result<Self, ReprError> {
        Self::new(BoundingBox::full(geometry), target)
    }
}

/// Bilinear resample of a `src_w x src_h` plane to `dst x dst` using pixel
/// centre alignment, with edge clamping.
pub fn resize_bilinear(src: &[f64], src_w: usize, src_h: usize, dst: usize) -> Vec<f64> {
    let sx = src_w as f64 / dst as f64;
    let sy = src_h as f64 / dst as f64;
    let taps = |d: usize, scale: f64, n: usize| {
        let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..dst).map(|x| taps(x, sx, src_w)).collect();
    let mut out = Vec::with_capacity(dst * dst);
    for y in 0..dst {
        let (y0, y1, fy) = taps(y, sy, src_h);
        let r0 = &src[y0 * src_w..(y0 + 1) * src_w];
        let r1 = &src[y1 * src_w..(y1 + 1) * src_w];
        for &(x0, x1, fx) in &cols {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Crop both channels to the box and resize to `target x target`.
/// Returns `[2][target][target]` row-major.
pub fn crop_resize(frame: &EventFrame, spec: &CropSpec) -> Result<Vec<f64>, ReprError> {
    spec.bbox.check(&frame.geometry)?;
    let (bx, by) = (spec.bbox.x0 as usize, spec.bbox.y0 as usize);
    let (bw, bh) = (spec.bbox.w as usize, spec.bbox.h as usize);
    let fw = frame.width();
    let mut out = Vec::with_capacity(2 * spec.target * spec.target);
    for c in 0..2 {
        let plane = frame.channel(c);
        let mut crop = Vec::with_capacity(bw * bh);
        for y in by..by + bh {
            crop.extend(plane[y * fw + bx..y * fw + bx + bw].iter().map(|&v| v as f64));
        }
        if bw == spec.target && bh == spec.target {
            out.extend(crop);
        } else {
            out.extend(resize_bilinear(&crop, bw, bh, spec.target));
        }
    }
    Ok(out)
}

/// Value scaling applied to network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Encoding {
    /// Event counts as-is.
    #[default]
    Raw,
    /// 1 where any event landed, else 0.
    Binary,
    /// Divide by the clip's maximum value.
    UnitMax,
}

impl FromStr for Encoding {
    type Err = ReprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Encoding::Raw),
            "binary" => Ok(Encoding::Binary),
            "unit-max" => Ok(Encoding::UnitMax),
            other => Err(ReprError::UnknownEncoding(other.to_string())),
        }
    }
}

impl Encoding {
    pub fn apply(self, data: &mut [f64]) {
        match self {
            Encoding::Raw => {}
            Encoding::Binary => data
                .iter_mut()
                .for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 }),
            Encoding::UnitMax => {
                let max = data.iter().cloned().fold(0.0, f64::max);
                if max > 0.0 {
                    data.iter_mut().for_each(|v| *v /= max);
                }
            }
        }
    }
}

/// A `T x 2 x S x S` clip tensor with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct InputClip {
    steps: usize,
    side: usize,
    data: Vec<f64>,
    pub label: usize,
}

impl InputClip {
    pub fn new(steps: usize, side: usize, data: Vec<f64>, label: usize) -> Result<Self, ReprError> {
        if steps == 0 {
            return Err(ReprError::EmptyStream);
        }
        if data.len() != steps * 2 * side * side {
            return Err(ReprError::BadDenseFile(format!(
                "clip data has {} values, expected {}",
                data.len(),
                steps * 2 * side * side
            )));
        }
        Ok(Self {
            steps,
            side,
            data,
            label,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn frame_len(&self) -> usize {
        2 * self.side * self.side
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Boxes for the slices of a clip.
#[derive(Debug, Clone, PartialEq)]
pub enum BoxSchedule {
    Static(CropSpec),
    PerSlice(Vec<CropSpec>),
}

pub fn clip_to_input(
    stream: &EventStream,
    boxes: &BoxSchedule,
    slice_duration: u64,
    encoding: Encoding,
    label: usize,
) -> Result<InputClip, ReprError> {
    let sequence = build_sequence(stream, slice_duration)?;
    let specs: Vec<&CropSpec> = match boxes {
        BoxSchedule::Static(spec) => vec![spec; sequence.len()],
        BoxSchedule::PerSlice(list) => {
            if list.len() != sequence.len() {
                return Err(ReprError::BoxCountMismatch {
                    boxes: list.len(),
                    slices: sequence.len(),
                });
            }
            list.iter().collect()
        }
    };
    let side = specs[0].target;
    if specs.iter().any(|s| s.target != side) {
        return Err(ReprError::InvalidTarget);
    }
    let mut data = Vec::with_capacity(sequence.len() * 2 * side * side);
    for (frame, spec) in sequence.frames.iter().zip(specs) {
        data.extend(crop_resize(frame, spec)?);
    }
    encoding.apply(&mut data);
    InputClip::new(sequence.len(), side, data, label)
}

/// Dense `T x C x H x W` tensor as stored in EVF1 files.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFrames {
    pub steps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DenseFrames {
    pub fn from_sequence(seq: &FrameSequence) -> Self {
        let (h, w) = seq
            .frames
            .first()
            .map(|f| (f.height(), f.width()))
            .unwrap_or((0, 0));
        Self {
            steps: seq.len(),
            channels: 2,
            height: h,
            width: w,
            data: seq
                .frames
                .iter()
                .flat_map(|f| f.counts().iter().map(|&c| c as f64))
                .collect(),
        }
    }

    pub fn from_clip(clip: &InputClip) -> Self {
        Self {
            steps: clip.steps(),
            channels: 2,
            height: clip.side(),
            width: clip.side(),
            data: clip.data().to_vec(),
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.channels * self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }
}

/// `"EVF1" | T u32 | C u32 | H u32 | W u32 | f32 data`, little-endian.
pub fn write_evf(frames: &DenseFrames) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + frames.data.len() * 4);
    out.extend_from_slice(EVF_MAGIC);
    for d in [frames.steps, frames.channels, frames.height, frames.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &frames.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_evf(bytes: &[u8]) -> Result<DenseFrames, ReprError> {
    if bytes.len() < 20 || &bytes[..4] != EVF_MAGIC {
        return Err(ReprError::BadDenseFile("missing EVF1 header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (steps, channels, height, width) = (dim(0), dim(1), dim(2), dim(3));
    let n = steps * channels * height * width;
    let body = &bytes[20..];
    if body.len() != n * 4 {
        return Err(ReprError::BadDenseFile(format!(
            "expected {} data bytes, found {}",
            n * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DenseFrames {
        steps,
        channels,
        height,
        width,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Polarity};

    fn geom(w: u16, h: u16) -> SensorGeometry {
        SensorGeometry::new(w, h, "test").unwrap()
    }

    fn stream(g: SensorGeometry, ev: &[(u16, u16, u64, i64)]) -> EventStream {
        EventStream::new(
            g,
            ev.iter()
                .map(|&(x, y, t, p)| Event::new(x, y, t, Polarity::from_sign(p).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn three_events_same_pixel() {
        let s = stream(geom(4, 4), &[(1, 1, 0, 1), (1, 1, 5, 1), (1, 1, 9, 1)]);
        let f = accumulate(&s, TimeWindow::new(0, 10).unwrap());
        assert_eq!(f.get(0, 1, 1), 3);
        assert_eq!(f.total(), 3);
    }

    #[test]
    fn empty_window_is_zero() {
        let s = stream(geom(4, 4), &[(1, 1, 100, 1)]);
        let f = accumulate(&s, TimeWindow::new(0, 10).unwrap());
        assert!(f.counts().iter().all(|&c| c == 0));
    }

    #[test]
    fn sequence_window_arithmetic() {
        let s = stream(geom(4, 4), &[(0, 0, 0, 1), (1, 0, 50_000, -1)]);
        let seq = build_sequence(&s, DEFAULT_SLICE_US).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.frames[0].get(0, 0, 0), 1);
        assert_eq!(seq.frames[1].get(1, 0, 1), 1);
        assert_eq!(seq.frames[0].window.end(), seq.frames[1].window.start());

        let s = stream(geom(4, 4), &[(0, 0, 10, 1), (1, 0, 32_000, 1)]);
        assert_eq!(build_sequence(&s, DEFAULT_SLICE_US).unwrap().len(), 1);

        let empty = EventStream::empty(geom(4, 4));
        assert_eq!(
            build_sequence(&empty, DEFAULT_SLICE_US),
            Err(ReprError::EmptyStream)
        );
        assert_eq!(
            build_sequence(&s, 0),
            Err(ReprError::InvalidSliceDuration)
        );
    }

    #[test]
    fn sequence_anchored_at_first_event() {
        let s = stream(geom(4, 4), &[(0, 0, 1_000_000, 1), (0, 0, 1_040_000, 1)]);
        let seq = build_sequence(&s, DEFAULT_SLICE_US).unwrap();
        assert_eq!(seq.frames[0].window.start(), 1_000_000);
        assert_eq!(seq.len(), 2);
    }

    #[test]
    fn identity_resize() {
        let s = stream(geom(3, 3), &[(0, 0, 0, 1), (2, 1, 1, -1), (2, 1, 2, -1)]);
        let f = accumulate(&s, TimeWindow::new(0, 10).unwrap());
        let spec = CropSpec::full_frame(&f.geometry, 3).unwrap();
        let out = crop_resize(&f, &spec).unwrap();
        let expected: Vec<f64> = f.counts().iter().map(|&c| c as f64).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn bilinear_centre_sampling_on_2x2() {
        // {0,0;0,4} sampled at the centre of a 1x1 output is the 4-way average.
        let out = resize_bilinear(&[0.0, 0.0, 0.0, 4.0], 2, 2, 1);
        assert_eq!(out, vec![1.0]);
    }

    #[test]
    fn constants_preserved_by_resize() {
        for (w, h, d) in [(7, 5, 64), (64, 64, 13), (1, 1, 4), (346, 260, 64)] {
            let src = vec![2.5; w * h];
            let out = resize_bilinear(&src, w, h, d);
            assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn box_must_fit() {
        let f = EventFrame::zeros(geom(10, 10), TimeWindow::new(0, 1).unwrap());
        let spec = CropSpec::new(
            BoundingBox {
                x0: 5,
                y0: 0,
                w: 6,
                h: 4,
            },
            4,
        )
        .unwrap();
        assert!(matches!(
            crop_resize(&f, &spec),
            Err(ReprError::BoxOutOfBounds { .. })
        ));
        assert_eq!(
            CropSpec::new(BoundingBox::full(&geom(2, 2)), 0),
            Err(ReprError::InvalidTarget)
        );
    }

    #[test]
    fn single_event_clip() {
        let g = geom(8, 8);
        let s = stream(g.clone(), &[(3, 4, 7, 1)]);
        let spec = CropSpec::full_frame(&g, 8).unwrap();
        let clip = clip_to_input(&s, &BoxSchedule::Static(spec), 33_000, Encoding::Raw, 2).unwrap();
        assert_eq!(clip.steps(), 1);
        assert_eq!(clip.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(clip.frame(0)[4 * 8 + 3], 1.0);
    }

    #[test]
    fn gap_slices_are_zero_and_box_count_checked() {
        let g = geom(8, 8);
        let s = stream(g.clone(), &[(0, 0, 0, 1), (1, 1, 100_000, -1)]);
        let spec = CropSpec::full_frame(&g, 8).unwrap();
        let clip = clip_to_input(&s, &BoxSchedule::Static(spec), 33_000, Encoding::Raw, 0).unwrap();
        assert_eq!(clip.steps(), 4);
        assert!(clip.frame(1).iter().all(|&v| v == 0.0));
        assert!(clip.frame(2).iter().all(|&v| v == 0.0));
        let err = clip_to_input(
            &s,
            &BoxSchedule::PerSlice(vec![spec; 2]),
            33_000,
            Encoding::Raw,
            0,
        );
        assert_eq!(
            err,
            Err(ReprError::BoxCountMismatch {
                boxes: 2,
                slices: 4
            })
        );
    }

    #[test]
    fn encodings() {
        let mut v = vec![0.0, 2.0, 4.0];
        Encoding::Binary.apply(&mut v);
        assert_eq!(v, vec![0.0, 1.0, 1.0]);
        let mut v = vec![0.0, 2.0, 4.0];
        Encoding::UnitMax.apply(&mut v);
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
        assert_eq!("unit-max".parse::<Encoding>().unwrap(), Encoding::UnitMax);
        assert!("nope".parse::<Encoding>().is_err());
    }

    #[test]
    fn evf_roundtrip_and_errors() {
        let d = DenseFrames {
            steps: 2,
            channels: 2,
            height: 2,
            width: 3,
            data: (0..24).map(|i| i as f64 * 0.5).collect(),
        };
        let bytes = write_evf(&d);
        assert_eq!(bytes.len(), 20 + 24 * 4);
        assert_eq!(read_evf(&bytes).unwrap(), d);
        assert!(read_evf(&bytes[..30]).is_err());
        assert!(read_evf(b"EVM1aaaaaaaaaaaaaaaa").is_err());
    }

    #[test]
    fn bbox_parse() {
        let b: BoundingBox = "1,2,30,40".parse().unwrap();
        assert_eq!((b.x0, b.y0, b.w, b.h), (1, 2, 30, 40));
        assert!("1,2,3".parse::<BoundingBox>().is_err());
    }
}
