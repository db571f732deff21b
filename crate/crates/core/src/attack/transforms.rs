//! Input-diversity transforms: random resize-and-pad and spectrum
//! augmentation in the 2-D cosine basis.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::Uniform;
use rand::Rng as _;

use super::config::DimParams;
use crate::gemm::{gemm, View};
use crate::image::{resize_bilinear, resize_bilinear_adjoint, FloatImage};
use crate::rng::{self, Rng};

/// One draw of the resize-and-pad transform. Linear in the image, so the
/// gradient is pulled back with [`DimTransform::adjoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimTransform {
    pub width: usize,
    pub height: usize,
    /// `None` when the draw left the image untouched.
    pub placement: Option<Placement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub inner_width: usize,
    pub inner_height: usize,
    pub offset_x: usize,
    pub offset_y: usize,
}

impl DimTransform {
    pub fn draw(params: &DimParams, width: usize, height: usize, r: &mut Rng) -> Self {
        let identity = DimTransform { width, height, placement: None };
        if params.probability <= 0.0 || r.random::<f64>() >= params.probability {
            return identity;
        }
        let ratio = if params.resize_max > params.resize_min {
            r.random_range(params.resize_min..=params.resize_max)
        } else {
            params.resize_min
        };
        let inner_width = (libm::round(width as f64 * ratio) as usize).clamp(1, width);
        let inner_height = (libm::round(height as f64 * ratio) as usize).clamp(1, height);
        let offset_x = r.random_range(0..=width - inner_width);
        let offset_y = r.random_range(0..=height - inner_height);
        DimTransform { width, height, placement: Some(Placement { inner_width, inner_height, offset_x, offset_y }) }
    }

    pub fn apply(&self, image: &FloatImage) -> FloatImage {
        let Some(p) = self.placement else { return image.clone() };
        let c = image.channels();
        let small = resize_bilinear(image.data(), self.width, self.height, c, p.inner_width, p.inner_height);
        let mut out = FloatImage::zeros(self.width, self.height, c);
        let data = out.data_mut();
        for y in 0..p.inner_height {
            let dst = ((y + p.offset_y) * self.width + p.offset_x) * c;
            data[dst..dst + p.inner_width * c].copy_from_slice(&small[y * p.inner_width * c..(y + 1) * p.inner_width * c]);
        }
        out
    }

    /// Pulls a gradient on the transformed image back to the source image.
    pub fn adjoint(&self, grad: &FloatImage) -> FloatImage {
        let Some(p) = self.placement else { return grad.clone() };
        let c = grad.channels();
        let mut small = vec![0.0; p.inner_width * p.inner_height * c];
        for y in 0..p.inner_height {
            let src = ((y + p.offset_y) * self.width + p.offset_x) * c;
            small[y * p.inner_width * c..(y + 1) * p.inner_width * c]
                .copy_from_slice(&grad.data()[src..src + p.inner_width * c]);
        }
        let back = resize_bilinear_adjoint(&small, self.width, self.height, c, p.inner_width, p.inner_height);
        FloatImage::from_raw(self.width, self.height, c, back).expect("shape preserved")
    }
}

/// Random resize within the configured ratio range then zero-pad back to the
/// original size; identity with probability `1 - params.probability`.
pub fn dim_transform(image: &FloatImage, params: &DimParams, seed: u64) -> FloatImage {
    let mut r = rng::rng(seed);
    DimTransform::draw(params, image.width(), image.height(), &mut r).apply(image)
}

/// Orthonormal 2-D DCT-II plan for one image size.
#[derive(Clone)]
pub struct Dct2 {
    width: usize,
    height: usize,
    /// `[k][n]` basis rows for each axis.
    cols: Vec<f64>,
    rows: Vec<f64>,
    #[cfg(feature = "std")]
    fast: fast::Plan,
}

impl core::fmt::Debug for Dct2 {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Dct2").field("width", &self.width).field("height", &self.height).finish()
    }
}

fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { libm::sqrt(1.0 / n as f64) } else { libm::sqrt(2.0 / n as f64) };
        for i in 0..n {
            m[k * n + i] = scale * libm::cos(core::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64);
        }
    }
    m
}

#[cfg(feature = "std")]
mod fast {
    use alloc::sync::Arc;
    use alloc::vec;
    use alloc::vec::Vec;

    use rustdct::{DctPlanner, TransformType2And3};

    /// Separable fast transform; rustdct's kernels are unnormalized.
    #[derive(Clone)]
    pub struct Plan {
        rows: Arc<dyn TransformType2And3<f64>>,
        cols: Arc<dyn TransformType2And3<f64>>,
    }

    fn transpose(src: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                out[x * h + y] = src[y * w + x];
            }
        }
        out
    }

    fn pass(t: &dyn TransformType2And3<f64>, data: &mut [f64], inverse: bool) {
        let n = t.len();
        let mut scratch = vec![0.0; t.get_scratch_len()];
        let (s0, s) = (libm::sqrt(1.0 / n as f64), libm::sqrt(2.0 / n as f64));
        for line in data.chunks_exact_mut(n) {
            if inverse {
                line[0] *= 2.0 * s0;
                line[1..].iter_mut().for_each(|v| *v *= s);
                t.process_dct3_with_scratch(line, &mut scratch);
            } else {
                t.process_dct2_with_scratch(line, &mut scratch);
                line[0] *= s0;
                line[1..].iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    impl Plan {
        pub fn new(width: usize, height: usize) -> Self {
            let mut planner = DctPlanner::new();
            Plan { rows: planner.plan_dct2(width), cols: planner.plan_dct2(height) }
        }

        pub fn run(&self, plane: &[f64], inverse: bool) -> Vec<f64> {
            let (w, h) = (self.rows.len(), self.cols.len());
            let mut data = plane.to_vec();
            pass(self.rows.as_ref(), &mut data, inverse);
            let mut t = transpose(&data, h, w);
            pass(self.cols.as_ref(), &mut t, inverse);
            transpose(&t, w, h)
        }
    }
}

impl Dct2 {
    pub fn new(width: usize, height: usize) -> Self {
        Dct2 {
            rows: dct_matrix(width),
            cols: dct_matrix(height),
            width,
            height,
            #[cfg(feature = "std")]
            fast: fast::Plan::new(width, height),
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Computes `left * plane * right` for a row-major `height x width` plane.
    fn sandwich(&self, left: View<'_>, plane: &[f64], right: View<'_>) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        gemm(View::new(plane, h, w), right, 0.0, &mut tmp);
        let mut out = vec![0.0; w * h];
        gemm(left, View::new(&tmp, h, w), 0.0, &mut out);
        out
    }

    /// Dense-matrix form of [`Dct2::forward`].
    pub fn forward_dense(&self, plane: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        self.sandwich(View::new(&self.cols, h, h), plane, View::new(&self.rows, w, w).t())
    }

    pub fn inverse_dense(&self, coeffs: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        self.sandwich(View::new(&self.cols, h, h).t(), coeffs, View::new(&self.rows, w, w))
    }

    /// Forward transform of a row-major `height x width` plane.
    pub fn forward(&self, plane: &[f64]) -> Vec<f64> {
        #[cfg(feature = "std")]
        return self.fast.run(plane, false);
        #[cfg(not(feature = "std"))]
        return self.forward_dense(plane);
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        #[cfg(feature = "std")]
        return self.fast.run(coeffs, true);
        #[cfg(not(feature = "std"))]
        return self.inverse_dense(coeffs);
    }
}

/// Gaussian noise of std `sigma`, a multiplicative `U(1 - rho, 1 + rho)`
/// mask on the cosine spectrum, and clipping back to `[0, 255]`.
///
/// The noise is added before the forward transform; the basis is
/// orthonormal so that is the same distribution as adding it to the
/// coefficients.
pub fn spectrum_transform_with(plan: &Dct2, image: &FloatImage, sigma: f64, rho: f64, r: &mut Rng) -> FloatImage {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    debug_assert_eq!(plan.size(), (w, h));
    let mut out = FloatImage::zeros(w, h, c);
    let mut plane = vec![0.0; w * h];
    let mask = (rho > 0.0).then(|| Uniform::new_inclusive(1.0 - rho, 1.0 + rho).expect("finite rho"));
    for ch in 0..c {
        for (i, p) in plane.iter_mut().enumerate() {
            *p = image.data()[i * c + ch];
            if sigma > 0.0 {
                *p += sigma * rng::normal(r);
            }
        }
        let mut coeffs = plan.forward(&plane);
        if let Some(u) = mask.as_ref() {
            coeffs.iter_mut().for_each(|v| *v *= r.sample(u));
        }
        let back = plan.inverse(&coeffs);
        for (i, v) in back.into_iter().enumerate() {
            out.data_mut()[i * c + ch] = v.clamp(0.0, 255.0);
        }
    }
    out
}

pub fn spectrum_transform(image: &FloatImage, sigma: f64, rho: f64, seed: u64) -> FloatImage {
    let plan = Dct2::new(image.width(), image.height());
    spectrum_transform_with(&plan, image, sigma, rho, &mut rng::rng(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn sample() -> FloatImage {
        Image::from_fn(20, 14, |x, y| [(x * 11) as u8, (y * 17) as u8, ((x * y) % 255) as u8]).to_float()
    }

    #[test]
    fn dim_bypass_and_shape() {
        let img = sample();
        let never = DimParams { probability: 0.0, ..Default::default() };
        assert_eq!(dim_transform(&img, &never, 1), img);
        let always = DimParams { probability: 1.0, resize_min: 0.5, resize_max: 0.9 };
        for seed in 0..10 {
            let out = dim_transform(&img, &always, seed);
            assert!(out.same_shape(&img));
            assert_eq!(out, dim_transform(&img, &always, seed));
        }
    }

    #[test]
    fn dim_adjoint_identity() {
        let always = DimParams { probability: 1.0, resize_min: 0.6, resize_max: 0.8 };
        let x = sample();
        let y = sample().map(libm::sin);
        let t = DimTransform::draw(&always, 20, 14, &mut rng::rng(5));
        let tx = t.apply(&x);
        let ty = t.adjoint(&y);
        let lhs: f64 = tx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!(libm::fabs(lhs - rhs) < 1e-8);
    }

    #[test]
    fn fast_and_dense_transforms_agree() {
        let plan = Dct2::new(16, 9);
        let plane: Vec<f64> = (0..144).map(|i| libm::cos(i as f64 * 0.7) * 50.0).collect();
        for (a, b) in plan.forward(&plane).iter().zip(plan.forward_dense(&plane)) {
            assert!(libm::fabs(a - b) < 1e-9);
        }
        for (a, b) in plan.inverse(&plane).iter().zip(plan.inverse_dense(&plane)) {
            assert!(libm::fabs(a - b) < 1e-9);
        }
    }

    #[test]
    fn dct_round_trip() {
        let plan = Dct2::new(12, 7);
        let plane: Vec<f64> = (0..84).map(|i| libm::sin(i as f64) * 100.0).collect();
        let back = plan.inverse(&plan.forward(&plane));
        for (a, b) in plane.iter().zip(&back) {
            assert!(libm::fabs(a - b) < 1e-9);
        }
        // DC coefficient of a constant plane
        let flat = vec![3.0; 84];
        let c = plan.forward(&flat);
        assert!(libm::fabs(c[0] - 3.0 * libm::sqrt(84.0)) < 1e-9);
        assert!(c[1..].iter().all(|v| libm::fabs(*v) < 1e-9));
    }

    #[test]
    fn spectrum_identity_when_pinned() {
        let img = sample();
        let out = spectrum_transform(&img, 0.0, 0.0, 3);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!(libm::fabs(a - b) <= 1e-3);
        }
        let noisy = spectrum_transform(&img, 16.0, 0.5, 3);
        assert!(noisy.data().iter().all(|v| (0.0..=255.0).contains(v)));
        assert_eq!(noisy, spectrum_transform(&img, 16.0, 0.5, 3));
    }
}
