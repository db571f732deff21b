
use crate::detector::FeatureObjective;
use crate::error::{Error, Result};
use crate::guidance::ImportanceMap;
use crate::tensor::FeatureSet;

/// `sum_i w_i * <M_i, h_i>` over the layers the maps cover; the attack
/// minimizes it.
pub fn feature_objective(features: &FeatureSet, maps: &ImportanceMap, weights: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (&layer, map) in maps.layers.iter().zip(&maps.maps) {
        let h = features
            .tensors
            .get(layer - 1)
            .ok_or_else(|| Error::input("importance map refers to a missing layer"))?;
        let w = weights.get(layer - 1).copied().ok_or_else(|| Error::input("missing layer weight"))?;
        total += w * map.dot(h)?;
    }
    Ok(total)
}

/// [`feature_objective`] as a differentiable objective.
#[derive(Debug, Clone)]
pub struct GuidedObjective<'a> {
    pub maps: &'a ImportanceMap,
    pub weights: &'a [f64],
}

impl FeatureObjective for GuidedObjective<'_> {
    fn evaluate(&self, features: &FeatureSet) -> Result<(f64, FeatureSet)> {
        let value = feature_objective(features, self.maps, self.weights)?;
        let mut grads = features.zeros_like();
        for (&layer, map) in self.maps.layers.iter().zip(&self.maps.maps) {
            let w = self.weights[layer - 1];
            let g = &mut grads.tensors[layer - 1];
            for (d, &m) in g.data.iter_mut().zip(&map.data) {
                *d = w * m;
            }
        }
        Ok((value, grads))
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;
    use alloc::vec;
    use alloc::vec::Vec;

    fn map_set(layers: Vec<usize>, maps: Vec<Tensor3>) -> ImportanceMap {
        ImportanceMap { layers, averaged: maps.clone(), maps, mask_probability: 0.9, samples: 1, seed: 0 }
    }

    #[test]
    fn single_layer_arithmetic() {
        let m = Tensor3::from_vec(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let h = Tensor3::from_vec(1, 2, 2, vec![2.0, 3.0, 4.0, 5.0]).unwrap();
        let f = FeatureSet::new(vec![1], vec![h]).unwrap();
        assert_eq!(feature_objective(&f, &map_set(vec![1], vec![m]), &[1.0]).unwrap(), 7.0);
    }

    #[test]
    fn zero_maps_and_weighted_sum() {
        let one = |v: f64| Tensor3::from_vec(1, 1, 1, vec![v]).unwrap();
        let f = FeatureSet::new(vec![1, 2, 3], vec![one(1.0), one(1.0), one(1.0)]).unwrap();
        let w = [0.2, 0.3, 0.5];
        let zeros = map_set(vec![1, 2, 3], vec![one(0.0), one(0.0), one(0.0)]);
        assert_eq!(feature_objective(&f, &zeros, &w).unwrap(), 0.0);
        let ones = map_set(vec![1, 2, 3], vec![one(1.0), one(1.0), one(1.0)]);
        assert!(libm::fabs(feature_objective(&f, &ones, &w).unwrap() - 1.0) < 1e-12);
        let bad = map_set(vec![1], vec![Tensor3::zeros(1, 2, 1)]);
        assert!(feature_objective(&f, &bad, &w).is_err());
    }
}
