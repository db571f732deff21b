//! Desk-scale test bench: procedural face scenes and a small trainable
//! detector that exposes three feature taps.

pub mod scene;
pub mod toy;

pub use scene::{generate_scene, translating_video, Face, SceneConfig};
pub use toy::{train_toy_detector, ToyDetector, ToyDetectorSpec, TrainingReport};
