use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionBox, GroundTruth};
use crate::error::{Error, Result};
use crate::image::{quantize, FloatImage, Image};
use crate::rng::{self, Rng};

const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SceneConfig {
    pub image_size: usize,
    pub faces_min: usize,
    pub faces_max: usize,
    /// Face height as a fraction of the image side.
    pub face_scale_min: f64,
    pub face_scale_max: f64,
    /// Half-width of the uniform per-pixel background noise.
    pub noise_amplitude: f64,
    /// Peak-to-peak intensity swing of the background gradient.
    pub gradient_strength: f64,
    /// Maximum number of rectangular distractors.
    pub clutter: usize,
    /// Blend weight of rendered faces over the background.
    pub face_opacity: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 128,
            faces_min: 1,
            faces_max: 3,
            face_scale_min: 0.14,
            face_scale_max: 0.3,
            noise_amplitude: 6.0,
            gradient_strength: 60.0,
            clutter: 3,
            face_opacity: 0.35,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::config("image_size must be at least 16"));
        }
        if self.faces_min > self.faces_max {
            return Err(Error::config("faces_min exceeds faces_max"));
        }
        if !(self.face_scale_min > 0.0 && self.face_scale_min <= self.face_scale_max) {
            return Err(Error::config("face scale range is empty"));
        }
        if !(self.face_opacity > 0.0 && self.face_opacity <= 1.0) {
            return Err(Error::config("face_opacity must be in (0, 1]"));
        }
        Ok(())
    }
}

/// A rendered face: an ellipse with two eyes and a mouth arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub cx: f64,
    pub cy: f64,
    /// Ellipse semi-axes.
    pub rx: f64,
    pub ry: f64,
    pub skin: [f64; 3],
}

impl Face {
    pub fn bounding_box(&self) -> DetectionBox {
        DetectionBox { x1: self.cx - self.rx, y1: self.cy - self.ry, x2: self.cx + self.rx, y2: self.cy + self.ry, score: 1.0 }
    }

    fn overlaps(&self, other: &Face, margin: f64) -> bool {
        libm::fabs(self.cx - other.cx) < self.rx + other.rx + margin
            && libm::fabs(self.cy - other.cy) < self.ry + other.ry + margin
    }

    pub fn shifted(&self, dx: f64, dy: f64) -> Face {
        Face { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }
}

fn uniform(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        r.random_range(lo..hi)
    }
}

/// Background plane: colour, linear gradient, clutter and pixel noise.
fn render_background(config: &SceneConfig, r: &mut Rng) -> FloatImage {
    let n = config.image_size;
    let base = [uniform(r, 40.0, 200.0), uniform(r, 40.0, 200.0), uniform(r, 40.0, 200.0)];
    let angle = uniform(r, 0.0, core::f64::consts::TAU);
    let (gx, gy) = (libm::cos(angle), libm::sin(angle));
    let swing = config.gradient_strength;
    let mut img = FloatImage::zeros(n, n, 3);
    let data = img.data_mut();
    for y in 0..n {
        for x in 0..n {
            let t = ((x as f64 / n as f64 - 0.5) * gx + (y as f64 / n as f64 - 0.5) * gy) * swing;
            for c in 0..3 {
                data[(y * n + x) * 3 + c] = base[c] + t;
            }
        }
    }
    let clutter = if config.clutter == 0 { 0 } else { r.random_range(0..=config.clutter) };
    for _ in 0..clutter {
        let w = uniform(r, 6.0, n as f64 * 0.25);
        let h = uniform(r, 6.0, n as f64 * 0.25);
        let x0 = uniform(r, 0.0, n as f64 - w);
        let y0 = uniform(r, 0.0, n as f64 - h);
        let color = [uniform(r, 0.0, 255.0), uniform(r, 0.0, 255.0), uniform(r, 0.0, 255.0)];
        for y in (y0 as usize)..((y0 + h) as usize).min(n) {
            for x in (x0 as usize)..((x0 + w) as usize).min(n) {
                data[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    img
}

fn add_pixel_noise(img: &mut FloatImage, amplitude: f64, r: &mut Rng) {
    if amplitude <= 0.0 {
        return;
    }
    for v in img.data_mut() {
        *v += uniform(r, -amplitude, amplitude);
    }
}

fn draw_face(img: &mut FloatImage, face: &Face, opacity: f64) {
    let (w, h) = (img.width(), img.height());
    let eye_r = (face.ry * 0.14).max(1.5);
    let eyes = [(face.cx - face.rx * 0.4, face.cy - face.ry * 0.22), (face.cx + face.rx * 0.4, face.cy - face.ry * 0.22)];
    let (mx, my) = (face.cx, face.cy + face.ry * 0.25);
    let (mrx, mry) = (face.rx * 0.45, face.ry * 0.3);
    let thick = (face.ry * 0.09).max(1.0);
    let x0 = libm::floor(face.cx - face.rx).max(0.0) as usize;
    let x1 = (libm::ceil(face.cx + face.rx) as usize).min(w);
    let y0 = libm::floor(face.cy - face.ry).max(0.0) as usize;
    let y1 = (libm::ceil(face.cy + face.ry) as usize).min(h);
    let data = img.data_mut();
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let dx = (px - face.cx) / face.rx;
            let dy = (py - face.cy) / face.ry;
            if dx * dx + dy * dy > 1.0 {
                continue;
            }
            let mut color = face.skin;
            for &(ex, ey) in &eyes {
                if (px - ex) * (px - ex) + (py - ey) * (py - ey) <= eye_r * eye_r {
                    color = [30.0, 25.0, 20.0];
                }
            }
            if py >= my {
                let ux = (px - mx) / mrx;
                let uy = (py - my) / mry;
                let d = libm::sqrt(ux * ux + uy * uy);
                if libm::fabs(d - 1.0) * mry.min(mrx) <= thick * 0.5 {
                    color = [120.0, 20.0, 30.0];
                }
            }
            for (d, c) in data[(y * w + x) * 3..(y * w + x) * 3 + 3].iter_mut().zip(color) {
                *d = opacity * c + (1.0 - opacity) * *d;
            }
        }
    }
}

fn random_face(config: &SceneConfig, r: &mut Rng) -> Face {
    let n = config.image_size as f64;
    let height = uniform(r, config.face_scale_min, config.face_scale_max) * n;
    let ry = height * 0.5;
    let rx = ry * uniform(r, 0.72, 0.86);
    let cx = uniform(r, rx + 1.0, n - rx - 1.0);
    let cy = uniform(r, ry + 1.0, n - ry - 1.0);
    let skin = [uniform(r, 170.0, 245.0), uniform(r, 120.0, 195.0), uniform(r, 90.0, 160.0)];
    Face { cx, cy, rx, ry, skin }
}

fn to_ground_truth(id: &str, faces: &[Face], size: usize) -> GroundTruth {
    let boxes = faces.iter().filter_map(|f| f.bounding_box().clipped(size, size)).collect();
    GroundTruth::new(id, boxes)
}

/// Renders scene `index` of the stream defined by `config.seed`.
///
/// Output depends only on `(config, index)`.
pub fn generate_scene(config: &SceneConfig, index: u64) -> Result<(Image, GroundTruth)> {
    config.validate()?;
    let mut r = rng::rng(rng::child(rng::substream(config.seed, "scene"), index));
    let n = config.image_size;
    if config.face_scale_min * n as f64 >= n as f64 - 2.0 {
        return Err(Error::Placement { attempts: 0 });
    }
    let mut img = render_background(config, &mut r);
    let count = r.random_range(config.faces_min..=config.faces_max);
    let mut faces: Vec<Face> = Vec::with_capacity(count);
    let mut attempts = 0;
    while faces.len() < count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::Placement { attempts: PLACEMENT_ATTEMPTS });
        }
        let f = random_face(config, &mut r);
        if faces.iter().all(|g| !f.overlaps(g, 2.0)) {
            faces.push(f);
        }
    }
    for f in &faces {
        draw_face(&mut img, f, config.face_opacity);
    }
    add_pixel_noise(&mut img, config.noise_amplitude, &mut r);
    let id = format!("scene-{}-{index}", config.seed);
    let gt = to_ground_truth(&id, &faces, n);
    Ok((img.map(|v| quantize(v) as f64).to_image(), gt))
}

/// A static background with one face translating by `(step_x, step_y)` pixels
/// per frame.
pub fn translating_video(
    config: &SceneConfig,
    index: u64,
    frames: usize,
    step_x: f64,
    step_y: f64,
) -> Result<Vec<(Image, GroundTruth)>> {
    config.validate()?;
    let stream = rng::child(rng::substream(config.seed, "video"), index);
    let mut r = rng::rng(stream);
    let n = config.image_size as f64;
    let background = render_background(config, &mut r);
    let travel_x = step_x * frames.saturating_sub(1) as f64;
    let travel_y = step_y * frames.saturating_sub(1) as f64;
    let mut face = random_face(config, &mut r);
    let span_x = n - 2.0 * face.rx - 2.0 - libm::fabs(travel_x);
    let span_y = n - 2.0 * face.ry - 2.0 - libm::fabs(travel_y);
    if span_x <= 0.0 || span_y <= 0.0 {
        return Err(Error::Placement { attempts: 1 });
    }
    face.cx = face.rx + 1.0 + uniform(&mut r, 0.0, span_x) + if travel_x < 0.0 { -travel_x } else { 0.0 };
    face.cy = face.ry + 1.0 + uniform(&mut r, 0.0, span_y) + if travel_y < 0.0 { -travel_y } else { 0.0 };
    (0..frames)
        .map(|v| {
            let f = face.shifted(step_x * v as f64, step_y * v as f64);
            let mut img = background.clone();
            draw_face(&mut img, &f, config.face_opacity);
            // fresh sensor noise every frame
            add_pixel_noise(&mut img, config.noise_amplitude, &mut rng::rng(rng::child(stream, v as u64 + 1)));
            let id = format!("video-{}-{index}-{v:05}", config.seed);
            Ok((img.to_image(), to_ground_truth(&id, &[f], config.image_size)))
        })
        .collect()
}
