//! Measurement: box matching, precision/recall/F1, SSIM and the robustness
//! sweep.

pub mod metrics;
pub mod robustness;
pub mod ssim;

pub use metrics::{f1_score, iou, match_detections, Counts, MatchResult, Scores, DEFAULT_IOU_THRESHOLD};
pub use robustness::{robustness_suite, Recompressor, RobustnessRow, RobustnessSpec, RobustnessTable, Transform};
pub use ssim::ssim;
