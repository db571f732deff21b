//! Feature-space adversarial perturbations that disrupt DNN face detectors.
//!
//! The crate is `no_std` (with `alloc`) and carries every numerical piece of
//! the pipeline: the detector adapter contract, a trainable toy detector with
//! a procedural scene generator, importance-guided feature objectives, the
//! signed-gradient attack family, optical-flow perturbation propagation for
//! video, and the evaluation metrics. File formats, codecs and the CLI live in
//! the `facepoison` companion crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod attack;
pub mod detection;
pub mod detector;
pub mod error;
pub mod eval;
mod gemm;
pub mod guidance;
pub mod image;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod video;

pub use detection::{DetectionBox, DetectionSet, GroundTruth};
pub use detector::{crop_faces, Detector, FeatureObjective, GradientResult};
pub use error::{Error, Result};
pub use image::{FloatImage, Image, Perturbation};
pub use tensor::{FeatureSet, Tensor3};
