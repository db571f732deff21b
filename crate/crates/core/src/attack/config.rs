use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Method {
    #[cfg_attr(feature = "serde", serde(rename = "ada-fgsm"))]
    AdaFgsm,
    #[cfg_attr(feature = "serde", serde(rename = "ada-bim"))]
    AdaBim,
    #[cfg_attr(feature = "serde", serde(rename = "ada-mim"))]
    AdaMim,
    #[cfg_attr(feature = "serde", serde(rename = "ada-nim"))]
    AdaNim,
    #[cfg_attr(feature = "serde", serde(rename = "ada-dim"))]
    AdaDim,
    #[cfg_attr(feature = "serde", serde(rename = "ada-dim++"))]
    AdaDimPlusPlus,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::AdaFgsm, Method::AdaBim, Method::AdaMim, Method::AdaNim, Method::AdaDim, Method::AdaDimPlusPlus];

    pub fn name(self) -> &'static str {
        match self {
            Method::AdaFgsm => "ada-fgsm",
            Method::AdaBim => "ada-bim",
            Method::AdaMim => "ada-mim",
            Method::AdaNim => "ada-nim",
            Method::AdaDim => "ada-dim",
            Method::AdaDimPlusPlus => "ada-dim++",
        }
    }

    /// Whether gradients are L1-normalized and accumulated with momentum.
    pub fn uses_momentum(self) -> bool {
        matches!(self, Method::AdaMim | Method::AdaNim | Method::AdaDim | Method::AdaDimPlusPlus)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(alloc::format!("unknown attack method '{s}'")))
    }
}

/// Random resize-and-pad input diversity.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct DimParams {
    pub resize_min: f64,
    pub resize_max: f64,
    pub probability: f64,
}

impl Default for DimParams {
    fn default() -> Self {
        DimParams { resize_min: 0.9, resize_max: 1.0, probability: 0.5 }
    }
}

/// Spectrum augmentation and neighbourhood gradient averaging.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SpectrumParams {
    /// Spectrum-transformed copies averaged per iteration.
    pub samples: usize,
    /// Std of the additive Gaussian noise (intensity units).
    pub sigma: f64,
    /// Multiplicative frequency mask is drawn from `U(1 - rho, 1 + rho)`.
    pub rho: f64,
    /// Extra gradients per copy at uniform offsets inside the epsilon ball.
    pub neighbors: usize,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        SpectrumParams { samples: 10, sigma: 16.0, rho: 0.5, neighbors: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AttackConfig {
    pub method: Method,
    /// L-infinity budget in intensity units.
    pub epsilon: f64,
    pub iterations: usize,
    /// Step size; `None` means `epsilon / iterations`.
    pub step: Option<f64>,
    pub momentum: f64,
    /// Weight of every tap, indexed by 1-based tap position minus one.
    pub layer_weights: Vec<f64>,
    pub guidance: GuidanceConfig,
    pub dim: DimParams,
    pub spectrum: SpectrumParams,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: Method::AdaBim,
            epsilon: 8.0,
            iterations: 10,
            step: None,
            momentum: 0.5,
            layer_weights: vec![0.2, 0.3, 0.5],
            guidance: GuidanceConfig::default(),
            dim: DimParams::default(),
            spectrum: SpectrumParams::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn with_method(method: Method) -> Self {
        AttackConfig { method, ..Default::default() }
    }

    /// Iterations actually run (FGSM is single-step).
    pub fn effective_iterations(&self) -> usize {
        if self.method == Method::AdaFgsm {
            1
        } else {
            self.iterations
        }
    }

    pub fn step_size(&self) -> f64 {
        if self.method == Method::AdaFgsm {
            return self.epsilon;
        }
        self.step.unwrap_or(self.epsilon / self.iterations.max(1) as f64)
    }

    pub fn validate(&self, tap_count: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::config(String::from(m)));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a non-negative number");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if let Some(s) = self.step {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("step must be non-negative");
            }
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1]");
        }
        self.guidance.validate(tap_count)?;
        for &l in &self.guidance.layers {
            match self.layer_weights.get(l - 1) {
                Some(&w) if w > 0.0 && w.is_finite() => {}
                _ => return bad("every attacked layer needs a positive weight"),
            }
        }
        let d = &self.dim;
        if !(d.resize_min > 0.0 && d.resize_min <= d.resize_max && d.resize_max <= 1.0) {
            return bad("dim resize range must satisfy 0 < min <= max <= 1");
        }
        if !(0.0..=1.0).contains(&d.probability) {
            return bad("dim probability must be in [0, 1]");
        }
        let s = &self.spectrum;
        if s.samples == 0 || s.sigma.is_nan() || s.sigma < 0.0 || !(0.0..=1.0).contains(&s.rho) {
            return bad("spectrum parameters out of range");
        }
        Ok(())
    }
}
