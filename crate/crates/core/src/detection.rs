use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DetectionBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl DetectionBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Result<Self> {
        let b = DetectionBox { x1, y1, x2, y2, score };
        if !(x1 < x2 && y1 < y2) || ![x1, y1, x2, y2, score].iter().all(|v| v.is_finite()) {
            return Err(Error::input("box must have x1 < x2 and y1 < y2"));
        }
        Ok(b)
    }

    /// Ground-truth style box (score 1).
    pub fn annotation(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(x1, y1, x2, y2, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing with positive
    /// area remains.
    pub fn clipped(&self, width: usize, height: usize) -> Option<Self> {
        let (w, h) = (width as f64, height as f64);
        let b = DetectionBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
            score: self.score,
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }
}

/// Detections for one image, sorted by descending score.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DetectionSet {
    pub image_id: String,
    boxes: Vec<DetectionBox>,
}

impl DetectionSet {
    /// Sorts by descending score and drops boxes below `threshold`.
    pub fn new(image_id: impl Into<String>, mut boxes: Vec<DetectionBox>, threshold: f64) -> Self {
        boxes.retain(|b| b.score >= threshold);
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        DetectionSet { image_id: image_id.into(), boxes }
    }

    pub fn empty(image_id: impl Into<String>) -> Self {
        DetectionSet { image_id: image_id.into(), boxes: Vec::new() }
    }

    pub fn boxes(&self) -> &[DetectionBox] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Converts detections into an annotation, e.g. to use clean-frame
    /// detections as reference.
    pub fn to_ground_truth(&self) -> GroundTruth {
        GroundTruth {
            image_id: self.image_id.clone(),
            boxes: self.boxes.iter().map(|b| DetectionBox { score: 1.0, ..*b }).collect(),
        }
    }
}

/// Annotated faces of one image.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GroundTruth {
    pub image_id: String,
    pub boxes: Vec<DetectionBox>,
}

impl GroundTruth {
    pub fn new(image_id: impl Into<String>, boxes: Vec<DetectionBox>) -> Self {
        GroundTruth { image_id: image_id.into(), boxes }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for b in &self.boxes {
            if !(b.x1 < b.x2 && b.y1 < b.y2)
                || b.x1 < 0.0
                || b.y1 < 0.0
                || b.x2 > width as f64
                || b.y2 > height as f64
            {
                return Err(Error::input("annotation box outside image or degenerate"));
            }
        }
        Ok(())
    }
}
