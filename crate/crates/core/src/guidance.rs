//! Importance-guided maps.
//!
//! The detector's task loss is replaced by a pseudo-objective: the cosine
//! similarity between the clean last-tap features and those of a randomly
//! masked copy of the image. Its gradient with respect to each attacked tap,
//! averaged over many masks and normalized, marks the feature elements that
//! matter most.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, FeatureObjective};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::tensor::{FeatureSet, Tensor3};

const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MapNormalization {
    /// Scale each layer to unit max-absolute value.
    #[default]
    MaxAbs,
    /// Keep the averaged gradient as is.
    None,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct GuidanceConfig {
    /// Probability that a pixel is zeroed.
    pub mask_probability: f64,
    /// Number of masked samples averaged.
    pub samples: usize,
    pub seed: u64,
    /// Attacked taps, 1-based positions in the detector's tap list.
    pub layers: Vec<usize>,
    pub normalization: MapNormalization,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mask_probability: 0.9,
            samples: 30,
            seed: 0,
            layers: vec![1, 2, 3],
            normalization: MapNormalization::MaxAbs,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, tap_count: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_probability) {
            return Err(Error::config("mask probability must be in [0, 1]"));
        }
        if self.samples == 0 {
            return Err(Error::config("guidance needs at least one sample"));
        }
        if self.layers.is_empty() || self.layers.iter().any(|&l| l == 0 || l > tap_count) {
            return Err(Error::config("layer subset must be a non-empty subset of the detector taps"));
        }
        let mut sorted = self.layers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.layers.len() {
            return Err(Error::config("layer subset has duplicates"));
        }
        Ok(())
    }
}

/// Per-layer guidance maps, shape-matched to the attacked taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    /// 1-based tap positions, same order as `maps`.
    pub layers: Vec<usize>,
    pub maps: Vec<Tensor3>,
    /// Averaged gradients before normalization.
    pub averaged: Vec<Tensor3>,
    pub mask_probability: f64,
    pub samples: usize,
    pub seed: u64,
}

impl ImportanceMap {
    pub fn map_for(&self, layer: usize) -> Option<&Tensor3> {
        self.layers.iter().position(|&l| l == layer).map(|i| &self.maps[i])
    }
}

/// Cosine similarity of two flattened tensors; 0 when either norm is
/// vanishing.
pub fn pseudo_objective(clean: &Tensor3, adversarial: &Tensor3) -> Result<f64> {
    Ok(pseudo_objective_gradient(clean, adversarial)?.0)
}

/// Cosine similarity and its gradient with respect to `adversarial`.
pub fn pseudo_objective_gradient(clean: &Tensor3, adversarial: &Tensor3) -> Result<(f64, Tensor3)> {
    let dot = clean.dot(adversarial)?;
    let (nc, na) = (clean.norm(), adversarial.norm());
    let mut grad = adversarial.zeros_like();
    if nc < NORM_GUARD || na < NORM_GUARD {
        return Ok((0.0, grad));
    }
    let cos = (dot / (nc * na)).clamp(-1.0, 1.0);
    let inv = 1.0 / (nc * na);
    let self_term = cos / (na * na);
    for ((g, &c), &a) in grad.data.iter_mut().zip(&clean.data).zip(&adversarial.data) {
        *g = c * inv - self_term * a;
    }
    Ok((cos, grad))
}

/// The pseudo-objective as a [`FeatureObjective`] on the last tap.
#[derive(Debug, Clone)]
pub struct PseudoObjective {
    pub reference: Tensor3,
}

impl FeatureObjective for PseudoObjective {
    fn evaluate(&self, features: &FeatureSet) -> Result<(f64, FeatureSet)> {
        let mut grads = features.zeros_like();
        let (value, g) = pseudo_objective_gradient(&self.reference, features.last())?;
        *grads.tensors.last_mut().expect("non-empty") = g;
        Ok((value, grads))
    }
}

/// Zeroes every pixel (all channels together) with probability `p`.
pub fn random_mask(image: &Image, p: f64, seed: u64) -> Image {
    let mut r = rng::rng(seed);
    let mut out = image.clone();
    let c = image.channels();
    for px in out.data_mut().chunks_exact_mut(c) {
        if r.random::<f64>() < p {
            px.iter_mut().for_each(|v| *v = 0);
        }
    }
    out
}

/// Scales `t` to unit max-absolute value; all-zero below the guard.
pub fn normalize_max_abs(t: &mut Tensor3) {
    let m = t.max_abs();
    if m < NORM_GUARD || !m.is_finite() {
        t.data.iter_mut().for_each(|v| *v = 0.0);
    } else {
        t.scale(1.0 / m);
    }
}

/// Averages the pseudo-objective gradient over `config.samples` masked
/// copies of `image` (the reference features come from the unmasked image)
/// and normalizes each attacked layer.
pub fn importance_maps(model: &dyn Detector, image: &Image, config: &GuidanceConfig) -> Result<ImportanceMap> {
    config.validate(model.tap_count())?;
    let clean = model.extract_features(&image.to_float())?;
    let objective = PseudoObjective { reference: clean.last().clone() };
    let mut averaged: Vec<Tensor3> = config.layers.iter().map(|&l| clean.tensors[l - 1].zeros_like()).collect();
    for j in 0..config.samples {
        let masked = random_mask(image, config.mask_probability, rng::child(config.seed, j as u64));
        let g = model.gradient(&masked.to_float(), &objective)?;
        for (acc, &l) in averaged.iter_mut().zip(&config.layers) {
            acc.add_assign(&g.features.tensors[l - 1]);
        }
    }
    let inv = 1.0 / config.samples as f64;
    averaged.iter_mut().for_each(|t| t.scale(inv));
    let maps = averaged
        .iter()
        .map(|t| {
            let mut m = t.clone();
            match config.normalization {
                MapNormalization::MaxAbs => normalize_max_abs(&mut m),
                MapNormalization::None => {
                    if !m.all_finite() || m.max_abs() < NORM_GUARD {
                        m.data.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
            m
        })
        .collect();
    Ok(ImportanceMap {
        layers: config.layers.clone(),
        maps,
        averaged,
        mask_probability: config.mask_probability,
        samples: config.samples,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor3 {
        Tensor3::from_vec(1, 1, data.len(), data.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let h = t(&[0.3, -1.2, 2.0]);
        assert!(libm::fabs(pseudo_objective(&h, &h).unwrap() - 1.0) < 1e-12);
        assert_eq!(pseudo_objective(&t(&[1.0, 0.0]), &t(&[0.0, 3.0])).unwrap(), 0.0);
        let v = pseudo_objective(&t(&[1.0, 0.0]), &t(&[1.0, 1.0])).unwrap();
        assert!(libm::fabs(v - core::f64::consts::FRAC_1_SQRT_2) < 1e-12);
        assert_eq!(pseudo_objective(&t(&[0.0, 0.0]), &t(&[1.0, 1.0])).unwrap(), 0.0);
        assert!(pseudo_objective(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let a = t(&[0.5, -0.25, 1.5, 0.75]);
        let b = t(&[1.0, 0.5, -0.5, 2.0]);
        let (_, g) = pseudo_objective_gradient(&a, &b).unwrap();
        for i in 0..4 {
            let mut p = b.clone();
            p.data[i] += 1e-6;
            let mut m = b.clone();
            m.data[i] -= 1e-6;
            let fd = (pseudo_objective(&a, &p).unwrap() - pseudo_objective(&a, &m).unwrap()) / 2e-6;
            assert!(libm::fabs(fd - g.data[i]) < 1e-8);
        }
    }

    #[test]
    fn masking_extremes() {
        let img = Image::from_fn(16, 16, |x, y| [x as u8 + 1, y as u8 + 1, 9]);
        assert_eq!(random_mask(&img, 0.0, 1), img);
        assert!(random_mask(&img, 1.0, 1).data().iter().all(|&v| v == 0));
        assert_eq!(random_mask(&img, 0.5, 4), random_mask(&img, 0.5, 4));
    }

    #[test]
    fn masking_rate_concentrates() {
        let img = Image::from_fn(128, 128, |_, _| [200, 200, 200]);
        let masked = random_mask(&img, 0.9, 77);
        let zero = masked.data().chunks_exact(3).filter(|p| p.iter().all(|&v| v == 0)).count();
        let frac = zero as f64 / (128.0 * 128.0);
        assert!((0.885..=0.915).contains(&frac), "{frac}");
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut m = t(&[0.2, -4.0, 1.0]);
        normalize_max_abs(&mut m);
        let once = m.clone();
        normalize_max_abs(&mut m);
        for (a, b) in once.data.iter().zip(&m.data) {
            assert!(libm::fabs(a - b) <= 1e-9);
        }
        let mut z = t(&[1e-14, 0.0]);
        normalize_max_abs(&mut z);
        assert!(z.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        let ok = GuidanceConfig::default();
        assert!(ok.validate(3).is_ok());
        assert!(GuidanceConfig { layers: vec![4], ..ok.clone() }.validate(3).is_err());
        assert!(GuidanceConfig { layers: vec![], ..ok.clone() }.validate(3).is_err());
        assert!(GuidanceConfig { samples: 0, ..ok.clone() }.validate(3).is_err());
        assert!(GuidanceConfig { mask_probability: 1.5, ..ok }.validate(3).is_err());
    }
}
