//! Box annotation files:
//! `{"images": [{"path": "a.png", "boxes": [[x1, y1, x2, y2, score?], ...]}]}`.

use std::collections::BTreeMap;
use std::path::Path;

use facepoison_core::eval::{match_detections, Counts, MatchResult};
use facepoison_core::{DetectionBox, DetectionSet, GroundTruth};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub images: Vec<AnnotatedImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedImage {
    pub path: String,
    pub boxes: Vec<Vec<f64>>,
}

fn parse_box(raw: &[f64]) -> Result<DetectionBox, String> {
    let parsed = match *raw {
        [x1, y1, x2, y2] => DetectionBox::annotation(x1, y1, x2, y2),
        [x1, y1, x2, y2, score] => DetectionBox::new(x1, y1, x2, y2, score),
        _ => return Err(format!("a box has {} numbers; expected 4 or 5", raw.len())),
    };
    parsed.map_err(|e| e.to_string())
}

impl AnnotatedImage {
    pub fn parse_boxes(&self) -> Result<Vec<DetectionBox>, String> {
        self.boxes.iter().map(|b| parse_box(b)).collect()
    }

    pub fn from_detections(path: impl Into<String>, set: &DetectionSet) -> Self {
        let boxes = set.boxes().iter().map(|b| vec![b.x1, b.y1, b.x2, b.y2, b.score]).collect();
        AnnotatedImage { path: path.into(), boxes }
    }

    pub fn from_ground_truth(path: impl Into<String>, gt: &GroundTruth) -> Self {
        let boxes = gt.boxes.iter().map(|b| vec![b.x1, b.y1, b.x2, b.y2]).collect();
        AnnotatedImage { path: path.into(), boxes }
    }
}

impl AnnotationFile {
    pub fn load(path: &Path) -> AppResult<Self> {
        let file: AnnotationFile = read_json(path)?;
        let mut seen = std::collections::BTreeSet::new();
        for img in &file.images {
            img.parse_boxes().map_err(|m| AppError::format(path, format!("{}: {m}", img.path)))?;
            if !seen.insert(img.path.as_str()) {
                return Err(AppError::format(path, format!("{} is listed twice", img.path)));
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        write_json(path, self)
    }

    fn by_path(&self) -> BTreeMap<&str, &AnnotatedImage> {
        self.images.iter().map(|i| (i.path.as_str(), i)).collect()
    }

    pub fn ground_truth(&self, path: &str) -> Option<GroundTruth> {
        let img = self.by_path().get(path).copied()?;
        Some(GroundTruth::new(path, img.parse_boxes().ok()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMatch {
    pub path: String,
    pub result: MatchResult,
}

/// Matches predictions against ground truth image by image. Images missing
/// from the predictions count as all-missed; predicted images without an
/// annotation entry count as all false positives.
pub fn evaluate_files(
    pred: &AnnotationFile,
    gt: &AnnotationFile,
    iou_threshold: f64,
    score_threshold: f64,
) -> (Counts, Vec<ImageMatch>) {
    let preds = pred.by_path();
    let truths = gt.by_path();
    let mut paths: Vec<&str> = preds.keys().chain(truths.keys()).copied().collect();
    paths.sort_unstable();
    paths.dedup();
    let mut total = Counts::default();
    let mut per_image = Vec::with_capacity(paths.len());
    for path in paths {
        let boxes = preds.get(path).map(|i| i.parse_boxes().unwrap_or_default()).unwrap_or_default();
        let set = DetectionSet::new(path, boxes, score_threshold);
        let truth = GroundTruth::new(path, truths.get(path).map(|i| i.parse_boxes().unwrap_or_default()).unwrap_or_default());
        let result = match_detections(&set, &truth, iou_threshold);
        total.add(&result);
        per_image.push(ImageMatch { path: path.to_string(), result });
    }
    (total, per_image)
}
