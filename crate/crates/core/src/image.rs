//! Pixel containers. [`Image`] holds 8-bit intensities in `[0, 255]`,
//! [`FloatImage`] is the real-valued workspace the optimizers run in, and
//! [`Perturbation`] is the signed residual between the two.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Interleaved (HWC) 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    /// All-zero RGB image.
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, channels: CHANNELS, data: vec![0; width * height * CHANNELS] }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::input("pixel buffer does not match dimensions"));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Fails with an input error unless the image is 3-channel and non-empty.
    pub fn ensure_rgb(&self) -> Result<()> {
        if self.channels != CHANNELS {
            return Err(Error::input(alloc::format!(
                "expected {CHANNELS} channels, got {}",
                self.channels
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("empty image"));
        }
        Ok(())
    }

    pub fn to_float(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Real-valued HWC image; values are intensities on the 0..255 scale but are
/// not clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FloatImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        FloatImage { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::input("float buffer does not match dimensions"));
        }
        Ok(FloatImage { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &FloatImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_of(&self, image: &Image) -> bool {
        self.width == image.width && self.height == image.height && self.channels == image.channels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rounds to the nearest integer and truncates to `[0, 255]`.
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Luma plane (BT.601 weights), row-major.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(self.channels)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    libm::round(v).clamp(0.0, 255.0) as u8
}

/// Signed residual `x_adv - x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation(pub FloatImage);

impl Perturbation {
    pub fn zeros_like(image: &Image) -> Self {
        Perturbation(FloatImage::zeros(image.width, image.height, image.channels))
    }

    /// Residual between an adversarial and a clean image.
    pub fn between(adversarial: &Image, clean: &Image) -> Result<Self> {
        if !adversarial.same_shape(clean) {
            return Err(Error::input("image shapes differ"));
        }
        let data = adversarial
            .data
            .iter()
            .zip(&clean.data)
            .map(|(&a, &c)| a as f64 - c as f64)
            .collect();
        Ok(Perturbation(FloatImage {
            width: clean.width,
            height: clean.height,
            channels: clean.channels,
            data,
        }))
    }

    pub fn linf(&self) -> f64 {
        self.0.data.iter().fold(0.0, |m, &v| m.max(libm::fabs(v)))
    }

    pub fn as_float(&self) -> &FloatImage {
        &self.0
    }

    /// Adds the residual to `image`, keeping it inside `[x - eps, x + eps]`
    /// and the valid range, and quantizes.
    pub fn apply(&self, image: &Image, eps: f64) -> Result<Image> {
        if !self.0.shape_of(image) {
            return Err(Error::input("perturbation shape does not match image"));
        }
        let mut out = image.clone();
        for ((o, &x), &d) in out.data.iter_mut().zip(&image.data).zip(&self.0.data) {
            *o = quantize_within(x as f64 + d, x, eps);
        }
        Ok(out)
    }
}

/// Quantizes `v` to an intensity that stays within `eps` of `origin`.
pub fn quantize_within(v: f64, origin: u8, eps: f64) -> u8 {
    let lo = libm::ceil(origin as f64 - eps).max(0.0);
    let hi = libm::floor(origin as f64 + eps).min(255.0);
    let r = if v.is_nan() { origin as f64 } else { libm::round(v) };
    r.clamp(lo, hi) as u8
}

/// Source taps for one output coordinate of a bilinear resize.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = libm::floor(s) as usize;
            let i1 = (i0 + 1).min(src - 1);
            Tap { i0, i1, w1: s - i0 as f64 }
        })
        .collect()
}

/// Bilinear resize of an interleaved buffer with half-pixel centers and edge
/// clamping.
pub fn resize_bilinear(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f64> {
    let tx = axis_taps(width, new_width);
    let ty = axis_taps(height, new_height);
    let mut out = vec![0.0; new_width * new_height * channels];
    for (oy, t_y) in ty.iter().enumerate() {
        let r0 = t_y.i0 * width;
        let r1 = t_y.i1 * width;
        for (ox, t_x) in tx.iter().enumerate() {
            let o = (oy * new_width + ox) * channels;
            for c in 0..channels {
                let p = |row: usize, col: usize| data[(row + col) * channels + c];
                let top = p(r0, t_x.i0) * (1.0 - t_x.w1) + p(r0, t_x.i1) * t_x.w1;
                let bot = p(r1, t_x.i0) * (1.0 - t_x.w1) + p(r1, t_x.i1) * t_x.w1;
                out[o + c] = top * (1.0 - t_y.w1) + bot * t_y.w1;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: maps a gradient on the resized buffer back
/// onto the source buffer.
pub fn resize_bilinear_adjoint(
    grad: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f64> {
    let tx = axis_taps(width, new_width);
    let ty = axis_taps(height, new_height);
    let mut out = vec![0.0; width * height * channels];
    for (oy, t_y) in ty.iter().enumerate() {
        let r0 = t_y.i0 * width;
        let r1 = t_y.i1 * width;
        for (ox, t_x) in tx.iter().enumerate() {
            let o = (oy * new_width + ox) * channels;
            for c in 0..channels {
                let g = grad[o + c];
                let (gt, gb) = (g * (1.0 - t_y.w1), g * t_y.w1);
                out[(r0 + t_x.i0) * channels + c] += gt * (1.0 - t_x.w1);
                out[(r0 + t_x.i1) * channels + c] += gt * t_x.w1;
                out[(r1 + t_x.i0) * channels + c] += gb * (1.0 - t_x.w1);
                out[(r1 + t_x.i1) * channels + c] += gb * t_x.w1;
            }
        }
    }
    out
}

impl FloatImage {
    pub fn resized(&self, new_width: usize, new_height: usize) -> FloatImage {
        FloatImage {
            width: new_width,
            height: new_height,
            channels: self.channels,
            data: resize_bilinear(&self.data, self.width, self.height, self.channels, new_width, new_height),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        let img = Image::from_fn(5, 4, |x, y| [(x * 50) as u8, (y * 60) as u8, 255]);
        assert_eq!(img.to_float().to_image(), img);
    }

    #[test]
    fn wrong_channel_count_is_rejected_by_rgb_check() {
        let img = Image::from_raw(2, 2, 1, vec![0; 4]).unwrap();
        assert!(matches!(img.ensure_rgb(), Err(Error::Input(_))));
        assert!(Image::from_raw(2, 2, 3, vec![0; 5]).is_err());
    }

    #[test]
    fn quantize_within_respects_fractional_bound() {
        assert_eq!(quantize_within(107.5, 100, 7.5), 107);
        assert_eq!(quantize_within(92.4, 100, 7.5), 93);
        assert_eq!(quantize_within(300.0, 250, 8.0), 255);
    }

    #[test]
    fn resize_identity_and_adjoint() {
        let data: Vec<f64> = (0..4 * 3 * 3).map(|v| v as f64).collect();
        assert_eq!(resize_bilinear(&data, 4, 3, 3, 4, 3), data);

        // <R x, y> == <x, R^T y>
        let x: Vec<f64> = (0..7 * 5 * 3).map(|v| libm::sin(v as f64)).collect();
        let y: Vec<f64> = (0..4 * 6 * 3).map(|v| libm::cos(v as f64 * 0.7)).collect();
        let rx = resize_bilinear(&x, 7, 5, 3, 4, 6);
        let rty = resize_bilinear_adjoint(&y, 7, 5, 3, 4, 6);
        let lhs: f64 = rx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&rty).map(|(a, b)| a * b).sum();
        assert!(libm::fabs(lhs - rhs) < 1e-9);
    }

    #[test]
    fn perturbation_apply_stays_in_bound() {
        let img = Image::from_fn(3, 3, |x, _| [(x * 120) as u8, 4, 251]);
        let mut p = Perturbation::zeros_like(&img);
        p.0.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 20.0 } else { -20.0 });
        let adv = p.apply(&img, 8.0).unwrap();
        assert!(Perturbation::between(&adv, &img).unwrap().linf() <= 8.0);
    }
}
