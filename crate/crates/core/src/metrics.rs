//! Image-fidelity metrics for reconstructed frames.
//!
//! All metrics assume intensities in `[0, 1]`. SSIM uses an 11×11 Gaussian
//! window (sigma 1.5), `K1 = 0.01`, `K2 = 0.03`, population (not sample)
//! statistics, and averages the SSIM map over positions where the window
//! fits entirely inside the image.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;

/// PSNR reported for a perfect reconstruction.
pub const PSNR_SENTINEL_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricError {
    #[error("image shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    ImageTooSmall(usize, usize),
    #[error("NCC undefined: constant image")]
    ZeroVariance,
    #[error("no image pairs")]
    EmptySet,
    #[error("report parse: {0}")]
    Parse(String),
}

/// A reconstruction and its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ImagePair<'a> {
    pub reference: &'a Image,
    pub test: &'a Image,
}

impl<'a> ImagePair<'a> {
    pub fn new(reference: &'a Image, test: &'a Image) -> Result<Self, MetricError> {
        if reference.width() != test.width() || reference.height() != test.height() {
            return Err(MetricError::ShapeMismatch(
                reference.width(),
                reference.height(),
                test.width(),
                test.height(),
            ));
        }
        Ok(Self { reference, test })
    }

    fn zip(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.reference
            .data()
            .iter()
            .copied()
            .zip(self.test.data().iter().copied())
    }

    fn len(&self) -> f64 {
        self.reference.data().len() as f64
    }
}

pub fn mse(pair: ImagePair) -> f64 {
    pair.zip().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pair.len()
}

pub fn rmse(pair: ImagePair) -> f64 {
    mse(pair).sqrt()
}

pub fn mae(pair: ImagePair) -> f64 {
    pair.zip().map(|(a, b)| (a - b).abs()).sum::<f64>() / pair.len()
}

/// PSNR in dB from a precomputed MSE.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        PSNR_SENTINEL_DB
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

pub fn psnr(pair: ImagePair, max_value: f64) -> f64 {
    psnr_from_mse(mse(pair), max_value)
}

/// Normalised 1-D Gaussian taps of length `SSIM_WINDOW`.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" filter: output is `(h - 10) x (w - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity.
pub fn ssim(pair: ImagePair) -> Result<f64, MetricError> {
    let (w, h) = (pair.reference.width(), pair.reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::ImageTooSmall(w, h));
    }
    let x = pair.reference.data();
    let y = pair.test.data();
    let taps = gaussian_taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let ux = filter_valid(x, w, h, &taps);
    let uy = filter_valid(y, w, h, &taps);
    let uxx = filter_valid(&prod(x, x), w, h, &taps);
    let uyy = filter_valid(&prod(y, y), w, h, &taps);
    let uxy = filter_valid(&prod(x, y), w, h, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..ux.len() {
        let (mx, my) = (ux[i], uy[i]);
        let vx = uxx[i] - mx * mx;
        let vy = uyy[i] - my * my;
        let cxy = uxy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / ux.len() as f64)
}

/// Zero-mean normalised cross-correlation.
pub fn ncc(pair: ImagePair) -> Result<f64, MetricError> {
    let n = pair.len();
    let ma = pair.reference.data().iter().sum::<f64>() / n;
    let mb = pair.test.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in pair.zip() {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub item: String,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// `None` when either image is constant.
    pub ncc: Option<f64>,
}

impl ItemMetrics {
    pub fn compute(item: impl Into<String>, pair: ImagePair) -> Result<Self, MetricError> {
        let m = mse(pair);
        let ncc = match ncc(pair) {
            Ok(v) => Some(v),
            Err(MetricError::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            item: item.into(),
            mse: m,
            rmse: m.sqrt(),
            mae: mae(pair),
            psnr_db: psnr_from_mse(m, 1.0),
            ssim: ssim(pair)?,
            ncc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub count: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Mean over items with a defined NCC; `None` if there are none.
    pub ncc: Option<f64>,
    pub ncc_undefined: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub items: Vec<ItemMetrics>,
    pub means: MeanMetrics,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    means: MeanMetrics,
}

fn mean_of(items: &[ItemMetrics], f: impl Fn(&ItemMetrics) -> f64) -> f64 {
    items.iter().map(f).sum::<f64>() / items.len() as f64
}

impl MetricReport {
    /// Means are arithmetic means of the per-item values.
    pub fn from_items(items: Vec<ItemMetrics>) -> Result<Self, MetricError> {
        if items.is_empty() {
            return Err(MetricError::EmptySet);
        }
        let defined: Vec<f64> = items.iter().filter_map(|i| i.ncc).collect();
        let means = MeanMetrics {
            count: items.len(),
            mse: mean_of(&items, |i| i.mse),
            rmse: mean_of(&items, |i| i.rmse),
            mae: mean_of(&items, |i| i.mae),
            psnr_db: mean_of(&items, |i| i.psnr_db),
            ssim: mean_of(&items, |i| i.ssim),
            ncc: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            ncc_undefined: items.len() - defined.len(),
        };
        Ok(Self { items, means })
    }

    /// One JSON record per item, then a `{"means": ...}` footer line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("metrics serialise"));
            out.push('\n');
        }
        let footer = Footer {
            means: self.means.clone(),
        };
        out.push_str(&serde_json::to_string(&footer).expect("metrics serialise"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MetricError> {
        let mut lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let last = lines.pop().ok_or(MetricError::EmptySet)?;
        let footer: Footer =
            serde_json::from_str(last).map_err(|e| MetricError::Parse(format!("footer: {e}")))?;
        let items = lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| MetricError::Parse(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<ItemMetrics>, _>>()?;
        if items.len() != footer.means.count {
            return Err(MetricError::Parse(format!(
                "footer counts {} items, found {}",
                footer.means.count,
                items.len()
            )));
        }
        Ok(Self {
            items,
            means: footer.means,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ncc = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "item\tmse\trmse\tmae\tpsnr_db\tssim\tncc");
        for i in &self.items {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.6}\t{}",
                i.item,
                i.mse,
                i.rmse,
                i.mae,
                i.psnr_db,
                i.ssim,
                ncc(i.ncc)
            );
        }
        let m = &self.means;
        let _ = writeln!(s, "mean ({} items)", m.count);
        let _ = writeln!(s, "  mse      {:.6}", m.mse);
        let _ = writeln!(s, "  rmse     {:.6}", m.rmse);
        let _ = writeln!(s, "  mae      {:.6}", m.mae);
        let _ = writeln!(s, "  psnr_db  {:.4} (perfect items count as {PSNR_SENTINEL_DB} dB)", m.psnr_db);
        let _ = writeln!(s, "  ssim     {:.6}", m.ssim);
        let _ = writeln!(s, "  ncc      {} ({} undefined)", ncc(m.ncc), m.ncc_undefined);
        s
    }
}

/// Metrics for every `(name, reference, test)` triple.
pub fn report<'a>(
    pairs: impl IntoIterator<Item = (String, &'a Image, &'a Image)>,
) -> Result<MetricReport, MetricError> {
    let items = pairs
        .into_iter()
        .map(|(name, r, t)| ItemMetrics::compute(name, ImagePair::new(r, t)?))
        .collect::<Result<Vec<_>, _>>()?;
    MetricReport::from_items(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn constant_offset() {
        let a = Image::filled(12, 12, 0.0);
        let b = Image::filled(12, 12, 0.5);
        let p = ImagePair::new(&a, &b).unwrap();
        assert_eq!(mse(p), 0.25);
        assert_eq!(rmse(p), 0.5);
        assert_eq!(mae(p), 0.5);
        assert_eq!(ncc(p), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn identical_images() {
        let a = img(16, 13, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let p = ImagePair::new(&a, &a).unwrap();
        assert_eq!(mse(p), 0.0);
        assert_eq!(psnr(p, 1.0), PSNR_SENTINEL_DB);
        assert_eq!(ssim(p).unwrap(), 1.0);
        assert!((ncc(p).unwrap() - 1.0).abs() < 1e-12);
        let c = Image::filled(11, 11, 0.5);
        assert!((ssim(ImagePair::new(&c, &c).unwrap()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_at_one_percent() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn inverted_image() {
        let a = img(12, 12, |x, y| ((x + y) % 2) as f64);
        let b = a.map(|v| 1.0 - v);
        let p = ImagePair::new(&a, &b).unwrap();
        assert!((ncc(p).unwrap() + 1.0).abs() < 1e-12);
        assert!(ssim(p).unwrap() < -0.5);
    }

    #[test]
    fn shape_and_size_errors() {
        let a = Image::filled(10, 12, 0.0);
        let b = Image::filled(12, 10, 0.0);
        assert!(matches!(ImagePair::new(&a, &b), Err(MetricError::ShapeMismatch(..))));
        let p = ImagePair::new(&a, &a).unwrap();
        assert_eq!(ssim(p), Err(MetricError::ImageTooSmall(10, 12)));
        assert_eq!(MetricReport::from_items(vec![]), Err(MetricError::EmptySet));
    }

    #[test]
    fn taps_are_normalised_and_symmetric() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(t[i], t[SSIM_WINDOW - 1 - i]);
        }
    }
}
