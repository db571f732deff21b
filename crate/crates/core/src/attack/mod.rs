//! The signed-gradient attack family that descends the importance-weighted
//! feature objective under an L-infinity budget.

mod config;
mod engine;
mod objective;
mod project;
pub mod transforms;

pub use config::{AttackConfig, DimParams, Method, SpectrumParams};
pub use engine::{run_attack, run_attack_observed, run_attack_with_maps, AttackReport, AttackState};
pub use objective::{feature_objective, GuidedObjective};
pub use project::project_linf;
pub use transforms::{dim_transform, spectrum_transform, Dct2, DimTransform};
