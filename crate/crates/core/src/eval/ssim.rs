use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let mid = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = libm::exp(-d * d / (2.0 * SIGMA * SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering; output is `(w - 10) x (h - 10)`.
fn filter(plane: &[f64], width: usize, height: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = width + 1 - WINDOW;
    let oh = height + 1 - WINDOW;
    let mut tmp = vec![0.0; ow * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, &s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

/// Mean SSIM over the luma planes with an 11-tap Gaussian window
/// (sigma 1.5) and the usual `K1 = 0.01`, `K2 = 0.03` constants.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::input("ssim inputs differ in shape"));
    }
    let (w, h) = (a.width(), a.height());
    if w < WINDOW || h < WINDOW {
        return Err(Error::input("ssim needs images of at least 11x11"));
    }
    let la = a.to_float().luma();
    let lb = b.to_float().luma();
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mu_a = filter(&la, w, h, &k);
    let mu_b = filter(&lb, w, h, &k);
    let saa = filter(&prod(&la, &la), w, h, &k);
    let sbb = filter(&prod(&lb, &lb), w, h, &k);
    let sab = filter(&prod(&la, &lb), w, h, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = saa[i] - ma * ma;
        let vb = sbb[i] - mb * mb;
        let cov = sab[i] - ma * mb;
        let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_image(seed: u64) -> Image {
        let mut r = rng::rng(seed);
        Image::from_fn(24, 20, |_, _| [r.random(), r.random(), r.random()])
    }

    #[test]
    fn identity_symmetry_and_extremes() {
        let a = random_image(1);
        let b = random_image(2);
        assert!(libm::fabs(ssim(&a, &a).unwrap() - 1.0) < 1e-9);
        assert!(libm::fabs(ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()) < 1e-9);
        let black = Image::new(16, 16);
        let white = Image::from_fn(16, 16, |_, _| [255; 3]);
        assert!(ssim(&black, &white).unwrap() <= 0.01);
    }

    #[test]
    fn shape_mismatch() {
        assert!(ssim(&Image::new(16, 16), &Image::new(17, 16)).is_err());
    }
}
