use crate::error::{Error, Result};
use crate::image::{FloatImage, Perturbation};
use crate::video::flow::FlowField;

/// Backward-sampling warp: the output at `q` is the bilinear sample of the
/// input at `q - flow(q)`. Taps outside the frame read as zero, so the result
/// is a convex combination of input values and zero and never exceeds the
/// input's L-infinity norm.
pub fn warp_perturbation(perturbation: &Perturbation, flow: &FlowField) -> Result<Perturbation> {
    let src = perturbation.as_float();
    let (w, h, c) = (src.width(), src.height(), src.channels());
    if flow.width != w || flow.height != h {
        return Err(Error::input("flow and perturbation shapes differ"));
    }
    let mut out = FloatImage::zeros(w, h, c);
    let data = src.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(x, y);
            let sx = x as f64 - dx;
            let sy = y as f64 - dy;
            if !(sx.is_finite() && sy.is_finite()) {
                continue;
            }
            let x0 = libm::floor(sx);
            let y0 = libm::floor(sy);
            let (fx, fy) = (sx - x0, sy - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            let o = (y * w + x) * c;
            for &(tx, ty, wt) in &taps {
                if wt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                    continue;
                }
                let i = (ty as usize * w + tx as usize) * c;
                for ch in 0..c {
                    dst[o + ch] += wt * data[i + ch];
                }
            }
        }
    }
    Ok(Perturbation(out))
}
