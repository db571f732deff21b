//! Perturbation propagation across video frames with dense optical flow.

pub mod flow;
pub mod propagate;
pub mod warp;

pub use flow::{compute_flow, FlowEstimator, FlowField, HornSchunck};
pub use propagate::{
    frame_attack_config, propagate, AnchorSchedule, Chaining, FrameReport, PropagationFailure, PropagationMode, PropagationReport,
    VideoSequence,
};
pub use warp::warp_perturbation;
