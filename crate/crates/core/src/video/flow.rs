//! Dense optical flow under brightness constancy.
//!
//! The built-in estimator is Horn-Schunck with a coarse-to-fine pyramid and
//! image warping so that displacements of a few pixels are recovered.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, Image};

/// Per-pixel displacement `(dx, dy)` from a source frame to a target frame:
/// the content at `p` in the source is found at `p + flow(p)` in the target.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Interleaved `(dx, dy)`, row-major.
    pub data: Vec<f64>,
    pub source: usize,
    pub target: usize,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { width, height, data: vec![0.0; width * height * 2], source: 0, target: 0 }
    }

    pub fn uniform(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        let mut f = Self::zeros(width, height);
        for p in f.data.chunks_exact_mut(2) {
            p[0] = dx;
            p[1] = dy;
        }
        f
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn negated(&self) -> FlowField {
        FlowField { data: self.data.iter().map(|v| -v).collect(), ..self.clone() }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 2)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.chunks_exact(2).fold(0.0, |m, p| m.max(libm::sqrt(p[0] * p[0] + p[1] * p[1])))
    }
}

/// Pluggable flow provider.
pub trait FlowEstimator: Sync {
    fn estimate(&self, from: &Image, to: &Image) -> Result<FlowField>;
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct HornSchunck {
    /// Jacobi iterations per warp.
    pub iterations: usize,
    /// Smoothness weight (intensities are scaled to `[0, 1]`).
    pub alpha: f64,
    /// Re-linearizations per pyramid level.
    pub warps: usize,
    /// Coarsest level side is kept at or above this.
    pub min_size: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        HornSchunck { iterations: 100, alpha: 0.1, warps: 2, min_size: 16 }
    }
}

struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.w as isize - 1) as usize;
        let yc = y.clamp(0, self.h as isize - 1) as usize;
        self.v[yc * self.w + xc]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let xf = libm::floor(x);
        let yf = libm::floor(y);
        let (fx, fy) = (x - xf, y - yf);
        let (xi, yi) = (xf as isize, yf as isize);
        let top = self.at(xi, yi) * (1.0 - fx) + self.at(xi + 1, yi) * fx;
        let bot = self.at(xi, yi + 1) * (1.0 - fx) + self.at(xi + 1, yi + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn half(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        Plane { w, h, v: resize_bilinear(&self.v, self.w, self.h, 1, w, h) }
    }

    /// Separable [1 2 1]/4 smoothing.
    fn smoothed(&self) -> Plane {
        let mut tmp = vec![0.0; self.v.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                tmp[y as usize * self.w + x as usize] =
                    0.25 * self.at(x - 1, y) + 0.5 * self.at(x, y) + 0.25 * self.at(x + 1, y);
            }
        }
        let t = Plane { w: self.w, h: self.h, v: tmp };
        let mut out = vec![0.0; self.v.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                out[y as usize * self.w + x as usize] = 0.25 * t.at(x, y - 1) + 0.5 * t.at(x, y) + 0.25 * t.at(x, y + 1);
            }
        }
        Plane { w: self.w, h: self.h, v: out }
    }
}

fn luma_plane(image: &Image) -> Plane {
    Plane { w: image.width(), h: image.height(), v: image.to_float().luma().into_iter().map(|v| v / 255.0).collect() }
}

/// Weighted neighbourhood average of the classic Horn-Schunck scheme.
fn neighbour_mean(f: &[f64], w: usize, h: usize, out: &mut [f64]) {
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        f[yc * w + xc]
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let edge = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1);
            let corner = at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1);
            out[y as usize * w + x as usize] = edge / 6.0 + corner / 12.0;
        }
    }
}

impl HornSchunck {
    fn refine(&self, a: &Plane, b: &Plane, u: &mut [f64], v: &mut [f64]) {
        let (w, h) = (a.w, a.h);
        let n = w * h;
        let a2 = self.alpha * self.alpha;
        for _ in 0..self.warps.max(1) {
            // linearize around the current flow: b is sampled at p + flow(p)
            let mut ix = vec![0.0; n];
            let mut iy = vec![0.0; n];
            let mut it = vec![0.0; n];
            let warped: Vec<f64> = (0..n)
                .map(|i| b.sample((i % w) as f64 + u[i], (i / w) as f64 + v[i]))
                .collect();
            let wb = Plane { w, h, v: warped };
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let i = y as usize * w + x as usize;
                    let gx = 0.5 * (a.at(x + 1, y) - a.at(x - 1, y) + wb.at(x + 1, y) - wb.at(x - 1, y)) * 0.5;
                    let gy = 0.5 * (a.at(x, y + 1) - a.at(x, y - 1) + wb.at(x, y + 1) - wb.at(x, y - 1)) * 0.5;
                    ix[i] = gx;
                    iy[i] = gy;
                    // constant term for the total flow
                    it[i] = wb.v[i] - a.v[i] - gx * u[i] - gy * v[i];
                }
            }
            let mut ub = vec![0.0; n];
            let mut vb = vec![0.0; n];
            for _ in 0..self.iterations {
                neighbour_mean(u, w, h, &mut ub);
                neighbour_mean(v, w, h, &mut vb);
                for i in 0..n {
                    let r = (ix[i] * ub[i] + iy[i] * vb[i] + it[i]) / (a2 + ix[i] * ix[i] + iy[i] * iy[i]);
                    u[i] = ub[i] - ix[i] * r;
                    v[i] = vb[i] - iy[i] * r;
                }
            }
        }
    }
}

impl FlowEstimator for HornSchunck {
    fn estimate(&self, from: &Image, to: &Image) -> Result<FlowField> {
        if !from.same_shape(to) {
            return Err(Error::input("flow frames differ in shape"));
        }
        if from.width() == 0 || from.height() == 0 {
            return Err(Error::input("empty frame"));
        }
        let mut pa = vec![luma_plane(from).smoothed()];
        let mut pb = vec![luma_plane(to).smoothed()];
        while {
            let last = pa.last().expect("non-empty");
            last.w / 2 >= self.min_size && last.h / 2 >= self.min_size
        } {
            let na = pa.last().expect("non-empty").half();
            let nb = pb.last().expect("non-empty").half();
            pa.push(na);
            pb.push(nb);
        }
        let coarsest = pa.last().expect("non-empty");
        let mut u = vec![0.0; coarsest.w * coarsest.h];
        let mut v = vec![0.0; coarsest.w * coarsest.h];
        let (mut cw, mut ch) = (coarsest.w, coarsest.h);
        for level in (0..pa.len()).rev() {
            let (a, b) = (&pa[level], &pb[level]);
            if (a.w, a.h) != (cw, ch) {
                let sx = a.w as f64 / cw as f64;
                let sy = a.h as f64 / ch as f64;
                u = resize_bilinear(&u, cw, ch, 1, a.w, a.h).into_iter().map(|x| x * sx).collect();
                v = resize_bilinear(&v, cw, ch, 1, a.w, a.h).into_iter().map(|x| x * sy).collect();
                cw = a.w;
                ch = a.h;
            }
            self.refine(a, b, &mut u, &mut v);
        }
        let mut field = FlowField::zeros(from.width(), from.height());
        for i in 0..u.len() {
            field.data[2 * i] = u[i];
            field.data[2 * i + 1] = v[i];
        }
        if !field.all_finite() {
            return Err(Error::Numerical { message: "non-finite flow".into(), values: Vec::new() });
        }
        Ok(field)
    }
}

/// Flow from `from` to `to` with the default Horn-Schunck settings.
pub fn compute_flow(from: &Image, to: &Image) -> Result<FlowField> {
    HornSchunck::default().estimate(from, to)
}
