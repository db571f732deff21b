use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionBox, DetectionSet, GroundTruth};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

pub fn iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MatchedPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub pairs: Vec<MatchedPair>,
}

/// Greedy one-to-one matching in descending score order. Each prediction
/// takes the still-unmatched ground truth with the highest IoU at or above
/// `iou_threshold`.
pub fn match_detections(pred: &DetectionSet, gt: &GroundTruth, iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gt.boxes.len()];
    let mut pairs = Vec::new();
    // DetectionSet is already score-sorted; the index order breaks ties.
    for (pi, p) in pred.boxes().iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.boxes.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(p, g);
            if v >= iou_threshold && best.map_or(true, |(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, v)) = best {
            taken[gi] = true;
            pairs.push(MatchedPair { prediction: pi, ground_truth: gi, iou: v });
        }
    }
    let tp = pairs.len();
    MatchResult {
        true_positives: tp,
        false_positives: pred.len() - tp,
        false_negatives: gt.boxes.len() - tp,
        pairs,
    }
}

/// Corpus-level TP/FP/FN totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Counts {
    pub fn add(&mut self, m: &MatchResult) {
        self.true_positives += m.true_positives;
        self.false_positives += m.false_positives;
        self.false_negatives += m.false_negatives;
    }

    pub fn merge(&mut self, other: Counts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }

    pub fn scores(&self) -> Scores {
        f1_score(self)
    }
}

impl From<&MatchResult> for Counts {
    fn from(m: &MatchResult) -> Self {
        let mut c = Counts::default();
        c.add(m);
        c
    }
}

impl<'a> core::iter::Sum<&'a MatchResult> for Counts {
    fn sum<I: Iterator<Item = &'a MatchResult>>(iter: I) -> Self {
        let mut c = Counts::default();
        iter.for_each(|m| c.add(m));
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and `F1 = 2 * R * P / (R + P)`; every 0/0 is 0.
pub fn f1_score(counts: &Counts) -> Scores {
    let precision = ratio(counts.true_positives, counts.true_positives + counts.false_positives);
    let recall = ratio(counts.true_positives, counts.true_positives + counts.false_negatives);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * recall * precision / (recall + precision) };
    Scores { precision, recall, f1 }
}
