//! The detector adapter contract: detections, feature taps and gradients.
//!
//! Any detector that can expose `K` intermediate activations and back-propagate
//! a feature-space objective to its input pixels can be attacked. Adapters own
//! their preprocessing; gradients are always reported in the 0..255 pixel
//! domain of the original image.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::detection::DetectionSet;
use crate::error::{Error, Result};
use crate::image::{resize_bilinear, FloatImage, Image};
use crate::tensor::FeatureSet;

/// Scalar objective over a feature set.
pub trait FeatureObjective {
    /// Objective value and its gradient with respect to every tapped tensor
    /// (direct contributions only; the adapter chains them through the network).
    fn evaluate(&self, features: &FeatureSet) -> Result<(f64, FeatureSet)>;
}

/// Output of [`Detector::gradient`].
#[derive(Debug, Clone)]
pub struct GradientResult {
    pub value: f64,
    /// Gradient with respect to the input pixels (0..255 units).
    pub input: FloatImage,
    /// Total derivative of the objective with respect to every tap.
    pub features: FeatureSet,
}

pub trait Detector: Sync {
    /// 1-based layer indices of the feature taps, shallowest first.
    fn taps(&self) -> &[usize];

    /// Confidence threshold applied by [`Detector::detect`].
    fn threshold(&self) -> f64;

    fn detect(&self, image: &Image) -> Result<DetectionSet>;

    fn extract_features(&self, image: &FloatImage) -> Result<FeatureSet>;

    fn gradient(&self, image: &FloatImage, objective: &dyn FeatureObjective) -> Result<GradientResult>;

    fn tap_count(&self) -> usize {
        self.taps().len()
    }
}

/// Rejects non-finite objective values with a diagnostic payload.
pub fn check_objective(value: f64, context: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical { message: format!("non-finite objective in {context}"), values: vec![value] })
    }
}

/// Crops every detected face and resizes it to `out_width x out_height`.
///
/// With no detections the result is a single all-zero image: that is what a
/// downstream face-swap pipeline ends up consuming when detection fails.
pub fn crop_faces(image: &Image, detections: &DetectionSet, out_width: usize, out_height: usize) -> Vec<Image> {
    if detections.is_empty() {
        return vec![Image::new(out_width, out_height)];
    }
    let channels = image.channels();
    let float = image.to_float();
    detections
        .boxes()
        .iter()
        .map(|b| {
            let x0 = (libm::floor(b.x1).max(0.0) as usize).min(image.width() - 1);
            let y0 = (libm::floor(b.y1).max(0.0) as usize).min(image.height() - 1);
            let x1 = (libm::ceil(b.x2) as usize).clamp(x0 + 1, image.width());
            let y1 = (libm::ceil(b.y2) as usize).clamp(y0 + 1, image.height());
            let (cw, ch) = (x1 - x0, y1 - y0);
            let mut region = Vec::with_capacity(cw * ch * channels);
            for y in y0..y1 {
                let row = &float.data()[(y * image.width() + x0) * channels..(y * image.width() + x1) * channels];
                region.extend_from_slice(row);
            }
            let resized = resize_bilinear(&region, cw, ch, channels, out_width, out_height);
            FloatImage::from_raw(out_width, out_height, channels, resized)
                .expect("resize output matches shape")
                .to_image()
        })
        .collect()
}
