//! Post-processing sweep: how much protection survives recompression,
//! rescaling, additive noise and blur.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::detection::GroundTruth;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::eval::metrics::{match_detections, Counts, Scores, DEFAULT_IOU_THRESHOLD};
use crate::image::{quantize, FloatImage, Image};
use crate::rng;

/// Lossy codec round trip (encode at `quality`, decode). Implemented outside
/// the core crate.
pub trait Recompressor {
    fn recompress(&self, image: &Image, quality: u8) -> Result<Image>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TransformKind {
    Identity,
    Recompress,
    Resize,
    Noise,
    Blur,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Recompress => "recompress",
            TransformKind::Resize => "resize",
            TransformKind::Noise => "noise",
            TransformKind::Blur => "blur",
        }
    }
}

/// One transform at one setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    Recompress { quality: u8 },
    /// Downscale by `ratio` then scale back to the original size.
    Resize { ratio: f64 },
    GaussianNoise { std: f64 },
    Blur { kernel: usize },
}

impl Transform {
    pub fn from_setting(kind: TransformKind, setting: f64) -> Result<Self> {
        Ok(match kind {
            TransformKind::Identity => Transform::Identity,
            TransformKind::Recompress => {
                if !(30.0..=100.0).contains(&setting) {
                    return Err(Error::config("recompression quality must be in [30, 100]"));
                }
                Transform::Recompress { quality: setting as u8 }
            }
            TransformKind::Resize => {
                if !(0.5..=1.0).contains(&setting) {
                    return Err(Error::config("resize ratio must be in [0.5, 1]"));
                }
                Transform::Resize { ratio: setting }
            }
            TransformKind::Noise => {
                if !(setting >= 0.0 && setting.is_finite()) {
                    return Err(Error::config("noise std must be non-negative"));
                }
                Transform::GaussianNoise { std: setting }
            }
            TransformKind::Blur => {
                let k = setting as usize;
                if k < 1 || k % 2 == 0 || k as f64 != setting {
                    return Err(Error::config("blur kernel must be an odd integer"));
                }
                Transform::Blur { kernel: k }
            }
        })
    }

    pub fn apply(&self, image: &Image, seed: u64, codec: &dyn Recompressor) -> Result<Image> {
        match *self {
            Transform::Identity => Ok(image.clone()),
            Transform::Recompress { quality } => codec.recompress(image, quality),
            Transform::Resize { ratio } => Ok(resize_round_trip(image, ratio)),
            Transform::GaussianNoise { std } => Ok(add_noise(image, std, seed)),
            Transform::Blur { kernel } => Ok(gaussian_blur(image, kernel)),
        }
    }
}

fn resize_round_trip(image: &Image, ratio: f64) -> Image {
    let (w, h) = (image.width(), image.height());
    let sw = (libm::round(w as f64 * ratio) as usize).max(1);
    let sh = (libm::round(h as f64 * ratio) as usize).max(1);
    let f = image.to_float();
    f.resized(sw, sh).resized(w, h).to_image()
}

fn add_noise(image: &Image, std: f64, seed: u64) -> Image {
    let mut r = rng::rng(seed);
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = quantize(*v as f64 + std * rng::normal(&mut r));
    }
    out
}

/// Gaussian blur with the OpenCV default sigma for a `kernel`-tap window and
/// replicated borders.
pub fn gaussian_blur(image: &Image, kernel: usize) -> Image {
    let sigma = 0.3 * ((kernel as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let r = (kernel / 2) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|d| libm::exp(-((d * d) as f64) / (2.0 * sigma * sigma))).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let src = image.to_float();
    let px = |data: &[f64], x: isize, y: isize, ch: usize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        data[(yc * w + xc) * c + ch]
    };
    let mut tmp = vec![0.0; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                tmp[(y * w + x) * c + ch] =
                    (-r..=r).zip(&k).map(|(d, kv)| kv * px(src.data(), x as isize + d, y as isize, ch)).sum();
            }
        }
    }
    let mut out = vec![0.0; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] =
                    (-r..=r).zip(&k).map(|(d, kv)| kv * px(&tmp, x as isize, y as isize + d, ch)).sum();
            }
        }
    }
    FloatImage::from_raw(w, h, c, out).expect("shape preserved").to_image()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TransformSweep {
    pub kind: TransformKind,
    pub settings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct RobustnessSpec {
    pub sweeps: Vec<TransformSweep>,
    pub seed: u64,
    pub iou_threshold: f64,
}

impl Default for RobustnessSpec {
    fn default() -> Self {
        RobustnessSpec {
            sweeps: vec![
                TransformSweep { kind: TransformKind::Recompress, settings: vec![30.0, 50.0, 70.0, 90.0] },
                TransformSweep { kind: TransformKind::Resize, settings: vec![0.5, 0.75, 1.0] },
                TransformSweep { kind: TransformKind::Noise, settings: vec![5.0, 10.0, 15.0] },
                TransformSweep { kind: TransformKind::Blur, settings: vec![3.0, 5.0] },
            ],
            seed: 0,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

impl RobustnessSpec {
    pub fn validate(&self) -> Result<()> {
        for s in &self.sweeps {
            for &v in &s.settings {
                Transform::from_setting(s.kind, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RobustnessRow {
    pub transform: String,
    pub setting: Option<f64>,
    /// Seed of the row's random draws, for replay.
    pub seed: u64,
    pub counts: Counts,
    pub scores: Option<Scores>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RobustnessTable {
    pub clean: Scores,
    pub score_threshold: f64,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn baseline(&self) -> &RobustnessRow {
        &self.rows[0]
    }

    pub fn find(&self, transform: &str, setting: f64) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.transform == transform && r.setting == Some(setting))
    }
}

fn evaluate(model: &dyn Detector, images: &[Image], gt: &[GroundTruth], iou_threshold: f64) -> Result<Counts> {
    let mut counts = Counts::default();
    for (img, g) in images.iter().zip(gt) {
        let det = model.detect(img)?;
        counts.add(&match_detections(&det, g, iou_threshold));
    }
    Ok(counts)
}

/// Applies every transform setting to the protected corpus and re-runs
/// detection. Row 0 is the untransformed protected baseline; a failing
/// transform marks its row and the sweep continues.
pub fn robustness_suite(
    protected: &[Image],
    clean: &[Image],
    ground_truth: &[GroundTruth],
    model: &dyn Detector,
    spec: &RobustnessSpec,
    codec: &dyn Recompressor,
) -> Result<RobustnessTable> {
    if protected.len() != clean.len() || protected.len() != ground_truth.len() {
        return Err(Error::input("protected, clean and annotation corpora must align"));
    }
    spec.validate()?;
    let clean_counts = evaluate(model, clean, ground_truth, spec.iou_threshold)?;
    let base = evaluate(model, protected, ground_truth, spec.iou_threshold)?;
    let mut rows = vec![RobustnessRow {
        transform: "none".to_string(),
        setting: None,
        seed: spec.seed,
        counts: base,
        scores: Some(base.scores()),
        error: None,
    }];
    for sweep in &spec.sweeps {
        for &setting in &sweep.settings {
            let transform = Transform::from_setting(sweep.kind, setting)?;
            let row_seed = rng::child(rng::substream(spec.seed, sweep.kind.name()), setting.to_bits());
            let mut counts = Counts::default();
            let mut error = None;
            for (i, (img, g)) in protected.iter().zip(ground_truth).enumerate() {
                let out = transform
                    .apply(img, rng::child(row_seed, i as u64), codec)
                    .and_then(|t| model.detect(&t));
                match out {
                    Ok(det) => counts.add(&match_detections(&det, g, spec.iou_threshold)),
                    Err(e) => {
                        error = Some(format!("image {i}: {e}"));
                        break;
                    }
                }
            }
            rows.push(RobustnessRow {
                transform: sweep.kind.name().to_string(),
                setting: Some(setting),
                seed: row_seed,
                counts,
                scores: error.is_none().then(|| counts.scores()),
                error,
            });
        }
    }
    Ok(RobustnessTable { clean: clean_counts.scores(), score_threshold: model.threshold(), rows })
}
