use crate::image::{FloatImage, Image};

/// Clips every value into `[origin - eps, origin + eps]` intersected with
/// the valid intensity range `[0, 255]`.
pub fn project_linf(candidate: &FloatImage, origin: &Image, eps: f64) -> FloatImage {
    debug_assert!(candidate.shape_of(origin));
    let mut out = candidate.clone();
    for (v, &o) in out.data_mut().iter_mut().zip(origin.data()) {
        let o = o as f64;
        let lo = (o - eps).max(0.0);
        let hi = (o + eps).min(255.0);
        *v = if v.is_nan() { o } else { v.clamp(lo, hi) };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single(v: u8) -> Image {
        Image::from_raw(1, 1, 3, vec![v; 3]).unwrap()
    }

    #[test]
    fn clamp_examples() {
        let origin = single(100);
        assert_eq!(project_linf(&origin.to_float(), &origin, 8.0), origin.to_float());
        let c = FloatImage::from_raw(1, 1, 3, vec![120.0; 3]).unwrap();
        assert_eq!(project_linf(&c, &origin, 8.0).data(), &[108.0; 3]);
        let c = FloatImage::from_raw(1, 1, 3, vec![260.0; 3]).unwrap();
        assert_eq!(project_linf(&c, &single(250), 8.0).data(), &[255.0; 3]);
    }
}
