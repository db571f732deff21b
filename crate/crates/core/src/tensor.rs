use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Channel-major (CHW) activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::input("tensor buffer does not match shape"));
        }
        Ok(Tensor3 { channels, height, width, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Tensor3::zeros(self.channels, self.height, self.width)
    }

    pub fn dot(&self, other: &Tensor3) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::input("tensor shapes differ"));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(libm::fabs(v)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// Activations of the declared feature taps, shallowest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// Tap layer indices as declared by the detector (1-based).
    pub layers: Vec<usize>,
    pub tensors: Vec<Tensor3>,
}

impl FeatureSet {
    pub fn new(layers: Vec<usize>, tensors: Vec<Tensor3>) -> Result<Self> {
        if layers.len() != tensors.len() || layers.is_empty() {
            return Err(Error::input("feature set needs one tensor per tap"));
        }
        Ok(FeatureSet { layers, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn last(&self) -> &Tensor3 {
        self.tensors.last().expect("feature set is never empty")
    }

    pub fn zeros_like(&self) -> Self {
        FeatureSet {
            layers: self.layers.clone(),
            tensors: self.tensors.iter().map(Tensor3::zeros_like).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor3::all_finite)
    }
}
