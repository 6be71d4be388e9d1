//! Synthetic event clips with known motion classes.
//!
//! Each clip shows a bright axis-aligned rectangle on a dark background.
//! Its edges move with a class-specific velocity. The scene is sampled on a
//! 1 ms grid; a pixel whose coverage changes by `d` in one step emits
//! `Poisson(event_rate * |d|)` events of sign `d`, at uniformly drawn
//! microseconds inside the step. Uniform background noise is added on top.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use super::manifest::{format_manifest, ClipRecord, Modality};
use super::taxonomy::{AuLabel, AU_TABLE};
use super::DatasetError;
use crate::events::{write_evm, Event, EventStream, Polarity, SensorGeometry, TimeWindow};
use crate::image::{encode_pgm, Image};
use crate::representation::{accumulate, slice_count, write_evf, DenseFrames, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    /// Translate along `(dx, dy)`, each in `{-1, 0, 1}`.
    Shift { dx: i8, dy: i8, fast: bool },
    /// A band anchored at one border that widens over time.
    Grow(Edge),
    /// Nothing moves; only noise events.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthClass {
    pub au: u32,
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<SynthClass>,
    pub clips: usize,
    pub width: u16,
    pub height: u16,
    pub duration_us: u64,
    /// Expected events per full-contrast pixel transition.
    pub event_rate: f64,
    /// Background events per pixel per second.
    pub noise_rate: f64,
    pub subjects: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Left, right, up and down shifts, labelled as head turns and tilts.
    pub fn four_motion(clips: usize, seed: u64) -> Self {
        let shift = |dx, dy| Motion::Shift { dx, dy, fast: false };
        Self {
            classes: vec![
                SynthClass { au: 51, motion: shift(-1, 0) },
                SynthClass { au: 52, motion: shift(1, 0) },
                SynthClass { au: 53, motion: shift(0, -1) },
                SynthClass { au: 54, motion: shift(0, 1) },
            ],
            clips,
            width: 64,
            height: 64,
            duration_us: 165_000,
            event_rate: 1.0,
            noise_rate: 0.5,
            subjects: 7,
            seed,
        }
    }

    /// One motion per action unit: eight directions at two speeds, four
    /// growing bands and a static scene.
    pub fn all_classes(clips: usize, seed: u64) -> Self {
        let dirs: [(i8, i8); 8] = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)];
        let mut motions: Vec<Motion> = [false, true]
            .iter()
            .flat_map(|&fast| dirs.iter().map(move |&(dx, dy)| Motion::Shift { dx, dy, fast }))
            .collect();
        motions.extend([Edge::Top, Edge::Bottom, Edge::Left, Edge::Right].map(Motion::Grow));
        motions.push(Motion::Static);
        let classes = AU_TABLE
            .iter()
            .zip(motions)
            .map(|(&(au, _), motion)| SynthClass { au, motion })
            .collect();
        Self {
            classes,
            ..Self::four_motion(clips, seed)
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        if self.classes.len() < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes.len()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            AuLabel::from_au(c.au)?;
            if self.classes[..i].iter().any(|o| o.au == c.au) {
                return bad(format!("AU {} used twice", c.au));
            }
        }
        if !(self.event_rate >= 0.0 && self.event_rate.is_finite()) {
            return bad(format!("event rate {} must be finite and >= 0", self.event_rate));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return bad(format!("noise rate {} must be finite and >= 0", self.noise_rate));
        }
        if self.width < 8 || self.height < 8 {
            return bad("frame must be at least 8x8".into());
        }
        if self.duration_us < 1000 {
            return bad("duration must be at least 1 ms".into());
        }
        if self.subjects == 0 || self.clips == 0 {
            return bad("need at least one clip and one subject".into());
        }
        Ok(())
    }

    pub fn class_of(&self, index: usize) -> SynthClass {
        self.classes[index % self.classes.len()]
    }

    pub fn subject_of(&self, index: usize) -> String {
        format!("s{}", index % self.subjects)
    }
}

const LO: f64 = 0.2;
const HI: f64 = 0.8;

/// Rectangle `[x0, x1) x [y0, y1)` whose edges move linearly in time (ms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub x0: (f64, f64),
    pub x1: (f64, f64),
    pub y0: (f64, f64),
    pub y1: (f64, f64),
    pub width: usize,
    pub height: usize,
}

fn overlap(p: usize, a: f64, b: f64) -> f64 {
    let lo = a.max(p as f64);
    let hi = b.min(p as f64 + 1.0);
    (hi - lo).max(0.0)
}

impl Scene {
    fn sample(&self, motion: Motion, subject: usize, duration_ms: f64, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (self.width as f64, self.height as f64);
        let thick = 6.0 + 2.0 * (subject % 4) as f64 + rng.random_range(-1.0..1.0);
        let mut s = *self;
        match motion {
            Motion::Shift { dx, dy, fast } => {
                let mut speed = rng.random_range(0.25..0.4);
                if fast {
                    speed *= 1.6;
                }
                if dx != 0 && dy != 0 {
                    speed /= std::f64::consts::SQRT_2;
                }
                let (vx, vy) = (dx as f64 * speed, dy as f64 * speed);
                let len = rng.random_range(20.0..40.0);
                let (sw, sh) = match (dx, dy) {
                    (0, _) => (len, thick),
                    (_, 0) => (thick, len),
                    _ => (2.0 * thick, 2.0 * thick),
                };
                // Centre at mid-clip, jittered.
                let cx = w / 2.0 + rng.random_range(-6.0..6.0);
                let cy = h / 2.0 + rng.random_range(-6.0..6.0);
                let half = duration_ms / 2.0;
                let (x_start, y_start) = (cx - vx * half, cy - vy * half);
                s.x0 = (x_start - sw / 2.0, vx);
                s.x1 = (x_start + sw / 2.0, vx);
                s.y0 = (y_start - sh / 2.0, vy);
                s.y1 = (y_start + sh / 2.0, vy);
            }
            Motion::Grow(edge) => {
                let start = rng.random_range(2.0..8.0);
                let v = rng.random_range(0.15..0.3);
                let (full_x, full_y) = ((0.0, 0.0), (0.0, 0.0));
                (s.x0, s.x1, s.y0, s.y1) = match edge {
                    Edge::Top => (full_x, (w, 0.0), full_y, (start, v)),
                    Edge::Bottom => (full_x, (w, 0.0), (h - start, -v), (h, 0.0)),
                    Edge::Left => (full_x, (start, v), full_y, (h, 0.0)),
                    Edge::Right => ((w - start, -v), (w, 0.0), full_y, (h, 0.0)),
                };
            }
            Motion::Static => {
                let sw = rng.random_range(10.0..30.0);
                let sh = rng.random_range(10.0..30.0);
                let x = rng.random_range(0.0..w - sw);
                let y = rng.random_range(0.0..h - sh);
                s.x0 = (x, 0.0);
                s.x1 = (x + sw, 0.0);
                s.y0 = (y, 0.0);
                s.y1 = (y + sh, 0.0);
            }
        }
        s
    }

    fn edges(&self, t_ms: f64) -> (f64, f64, f64, f64) {
        let at = |(p, v): (f64, f64)| p + v * t_ms;
        (at(self.x0), at(self.x1), at(self.y0), at(self.y1))
    }

    /// Fraction of each pixel covered by the rectangle at `t_ms`.
    pub fn coverage(&self, t_ms: f64) -> Vec<f64> {
        let (x0, x1, y0, y1) = self.edges(t_ms);
        let ox: Vec<f64> = (0..self.width).map(|x| overlap(x, x0, x1)).collect();
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            let oy = overlap(y, y0, y1);
            out.extend(ox.iter().map(|&o| o * oy));
        }
        out
    }

    /// Grayscale rendering at `t_ms`.
    pub fn render(&self, t_ms: f64) -> Image {
        let data = self.coverage(t_ms).into_iter().map(|c| LO + (HI - LO) * c).collect();
        Image::new(self.width, self.height, data).expect("dimensions agree")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub index: usize,
    pub label: AuLabel,
    pub subject: String,
    pub stream: EventStream,
    pub scene: Scene,
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive finite rate").sample(rng) as u64
}

pub fn generate_clip(spec: &SyntheticSpec, index: usize) -> Result<SyntheticClip, DatasetError> {
    let class = spec.class_of(index);
    let label = AuLabel::from_au(class.au)?;
    let geometry = SensorGeometry::new(spec.width, spec.height, "synthetic")
        .map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index as u64);
    let steps = spec.duration_us / 1000;
    let base = Scene {
        x0: (0.0, 0.0),
        x1: (0.0, 0.0),
        y0: (0.0, 0.0),
        y1: (0.0, 0.0),
        width: w,
        height: h,
    };
    let scene = base.sample(class.motion, index % spec.subjects, steps as f64, &mut rng);

    let mut events = Vec::new();
    let mut prev = scene.coverage(0.0);
    for k in 0..steps {
        let next = scene.coverage((k + 1) as f64);
        for (i, (&a, &b)) in prev.iter().zip(&next).enumerate() {
            let d = b - a;
            if d == 0.0 {
                continue;
            }
            let p = if d > 0.0 { Polarity::On } else { Polarity::Off };
            for _ in 0..poisson(&mut rng, spec.event_rate * d.abs()) {
                let t = k * 1000 + rng.random_range(0..1000);
                events.push(Event::new((i % w) as u16, (i / w) as u16, t, p));
            }
        }
        prev = next;
    }
    let area = (w * h) as f64;
    let noise = poisson(&mut rng, spec.noise_rate * area * steps as f64 / 1000.0);
    for _ in 0..noise {
        let x = rng.random_range(0..w) as u16;
        let y = rng.random_range(0..h) as u16;
        let t = rng.random_range(0..steps * 1000);
        let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
        events.push(Event::new(x, y, t, p));
    }
    events.sort_by_key(|e| e.t);
    let stream = EventStream::new(geometry, events).map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
    Ok(SyntheticClip {
        index,
        label,
        subject: spec.subject_of(index),
        stream,
        scene,
    })
}

/// All clips of `spec`, generated in parallel with per-clip seeds.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticClip>, DatasetError> {
    spec.validate()?;
    (0..spec.clips).into_par_iter().map(|i| generate_clip(spec, i)).collect()
}

impl SyntheticClip {
    /// Slice windows anchored at the first event; empty for an empty stream.
    pub fn slice_windows(&self, slice_us: u64) -> Vec<TimeWindow> {
        match (self.stream.first_timestamp(), self.stream.last_timestamp()) {
            (Some(first), Some(last)) if slice_us > 0 => (0..slice_count(first, last, slice_us))
                .map(|i| {
                    let s = first + i as u64 * slice_us;
                    TimeWindow::new(s, s + slice_us).expect("ordered window")
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Per slice: the event frame and the scene rendered at the slice midpoint.
    pub fn pairs(&self, slice_us: u64) -> Vec<(DenseFrames, Image)> {
        self.slice_windows(slice_us)
            .into_iter()
            .map(|win| {
                let seq = FrameSequence {
                    frames: vec![accumulate(&self.stream, win)],
                    slice_duration: slice_us,
                };
                let mid_ms = (win.start() as f64 + slice_us as f64 / 2.0) / 1000.0;
                (DenseFrames::from_sequence(&seq), self.scene.render(mid_ms))
            })
            .collect()
    }

    pub fn stem(&self) -> String {
        format!("clip_{:04}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub clips: usize,
    pub events: u64,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

/// Write `clips/*.evm`, `frames/*.pgm`, `conditions/*.evf`, `manifest.txt`
/// and the paired lists `pairs_train.txt` / `pairs_test.txt`. The last
/// `test_fraction` of clips (by index) go to the test list.
pub fn write_dataset(
    dir: &Path,
    clips: &[SyntheticClip],
    slice_us: u64,
    test_fraction: f64,
) -> Result<SynthSummary, DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io(format!("{}: {e}", dir.display()));
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(DatasetError::InvalidSpec(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    for sub in ["clips", "frames", "conditions"] {
        fs::create_dir_all(dir.join(sub)).map_err(io)?;
    }
    let n_test = (clips.len() as f64 * test_fraction).round() as usize;
    let first_test = clips.len() - n_test;
    let mut records = Vec::with_capacity(clips.len());
    let (mut train, mut test) = (String::new(), String::new());
    let (mut n_train_pairs, mut n_test_pairs) = (0, 0);
    let mut events = 0u64;
    for (k, clip) in clips.iter().enumerate() {
        let stem = clip.stem();
        let rel = format!("clips/{stem}.evm");
        fs::write(dir.join(&rel), write_evm(&clip.stream)).map_err(io)?;
        events += clip.stream.len() as u64;
        records.push(ClipRecord {
            clip_path: rel.into(),
            subject: clip.subject.clone(),
            label: clip.label,
            modality: Modality::EventsSynthetic,
            lux: None,
            bbox: None,
        });
        for (t, (cond, frame)) in clip.pairs(slice_us).into_iter().enumerate() {
            let c = format!("conditions/{stem}_t{t:02}.evf");
            let f = format!("frames/{stem}_t{t:02}.pgm");
            fs::write(dir.join(&c), write_evf(&cond)).map_err(io)?;
            fs::write(dir.join(&f), encode_pgm(&frame)).map_err(io)?;
            let line = format!("{c},{f}\n");
            if k >= first_test {
                test.push_str(&line);
                n_test_pairs += 1;
            } else {
                train.push_str(&line);
                n_train_pairs += 1;
            }
        }
    }
    fs::write(dir.join("manifest.txt"), format_manifest(&records)).map_err(io)?;
    fs::write(dir.join("pairs_train.txt"), train).map_err(io)?;
    fs::write(dir.join("pairs_test.txt"), test).map_err(io)?;
    Ok(SynthSummary {
        clips: clips.len(),
        events,
        train_pairs: n_train_pairs,
        test_pairs: n_test_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid_x_drift(clip: &SyntheticClip) -> f64 {
        let wins = clip.slice_windows(33_000);
        let cx: Vec<f64> = wins
            .iter()
            .map(|&w| {
                let s = clip.stream.slice(w);
                s.events().iter().map(|e| e.x as f64).sum::<f64>() / s.len().max(1) as f64
            })
            .collect();
        cx.last().unwrap() - cx.first().unwrap()
    }

    #[test]
    fn static_noiseless_scene_is_silent() {
        let mut spec = SyntheticSpec::four_motion(2, 3);
        spec.classes[0].motion = Motion::Static;
        spec.noise_rate = 0.0;
        assert!(generate_clip(&spec, 0).unwrap().stream.is_empty());
        assert!(!generate_clip(&spec, 1).unwrap().stream.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec::four_motion(6, 42);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(&SyntheticSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a[0].stream, other[0].stream);
    }

    #[test]
    fn left_and_right_drift_apart() {
        let mut spec = SyntheticSpec::four_motion(40, 7);
        spec.noise_rate = 0.0;
        for clip in generate_synthetic(&spec).unwrap() {
            let drift = centroid_x_drift(&clip);
            match clip.label.au_number() {
                51 => assert!(drift < 0.0, "{drift}"),
                52 => assert!(drift > 0.0, "{drift}"),
                _ => {}
            }
        }
    }

    #[test]
    fn leading_edge_is_positive() {
        let mut spec = SyntheticSpec::four_motion(2, 1);
        spec.noise_rate = 0.0;
        let clip = generate_clip(&spec, 1).unwrap(); // moving right
        let win = clip.slice_windows(33_000)[2];
        let s = clip.stream.slice(win);
        let mean = |p: Polarity| {
            let xs: Vec<f64> = s.events().iter().filter(|e| e.p == p).map(|e| e.x as f64).collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!(mean(Polarity::On) > mean(Polarity::Off));
    }

    #[test]
    fn all_classes_preset() {
        let spec = SyntheticSpec::all_classes(21, 0);
        spec.validate().unwrap();
        let clips = generate_synthetic(&spec).unwrap();
        let labels: std::collections::BTreeSet<usize> = clips.iter().map(|c| c.label.class_index()).collect();
        assert_eq!(labels.len(), 21);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticSpec::four_motion(4, 0);
        spec.noise_rate = -1.0;
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSpec::four_motion(4, 0);
        spec.classes.truncate(1);
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSpec::four_motion(4, 0);
        spec.classes[1].au = 51;
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSpec::four_motion(4, 0);
        spec.classes[1].au = 99;
        assert_eq!(spec.validate(), Err(DatasetError::UnknownAu(99)));
    }

    #[test]
    fn pairs_follow_slices() {
        let spec = SyntheticSpec::four_motion(1, 5);
        let clip = generate_clip(&spec, 0).unwrap();
        let pairs = clip.pairs(33_000);
        assert_eq!(pairs.len(), clip.slice_windows(33_000).len());
        let total: f64 = pairs.iter().map(|(c, _)| c.data.iter().sum::<f64>()).sum();
        assert_eq!(total as usize, clip.stream.len());
        for (_, img) in &pairs {
            assert!(img.data().iter().all(|&v| (LO..=HI).contains(&v)));
        }
    }
}
