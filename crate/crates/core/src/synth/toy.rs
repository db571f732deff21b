//! A three-stage convolutional face detector small enough to train on a CPU
//! in minutes. Every stage halves the resolution and its ReLU output is a
//! feature tap; a dense per-cell head on the last stage predicts objectness
//! and a box for every 8x8 cell.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionBox, DetectionSet, GroundTruth};
use crate::detector::{check_objective, Detector, FeatureObjective, GradientResult};
use crate::error::{Error, Result};
use crate::eval::metrics::{match_detections, Counts, DEFAULT_IOU_THRESHOLD};
use crate::eval::iou;
use crate::image::{FloatImage, Image};
use crate::nn::{blur121, relu_backward, relu_in_place, sigmoid, Adam, Conv2d};
use crate::rng;
use crate::synth::scene::{generate_scene, SceneConfig};
use crate::tensor::{FeatureSet, Tensor3};

const INPUT_MEAN: f64 = 127.5;
const INPUT_SCALE: f64 = 1.0 / 64.0;
const STRIDE: f64 = 8.0;
const OUTPUTS: usize = 5;
const FOCAL_ALPHA: f64 = 0.5;
const FOCAL_GAMMA: f64 = 2.0;
const PRIOR_PROBABILITY: f64 = 0.01;
const GRAD_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ToyDetectorSpec {
    /// Output channels of the three stride-2 backbone stages.
    pub channels: [usize; 3],
    pub head_channels: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Reference box side in pixels; sizes are regressed in log space around it.
    pub box_prior: f64,
    /// Blur each stage input before its stride-2 convolution.
    pub antialias: bool,
    pub scene: SceneConfig,
}

impl Default for ToyDetectorSpec {
    fn default() -> Self {
        ToyDetectorSpec {
            channels: [8, 16, 32],
            head_channels: 32,
            epochs: 10,
            learning_rate: 2e-3,
            batch_size: 8,
            seed: 0,
            score_threshold: 0.5,
            nms_iou: 0.3,
            box_prior: 32.0,
            antialias: true,
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainingReport {
    pub clean_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub epochs: usize,
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub score_threshold: f64,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ToyDetector {
    pub spec: ToyDetectorSpec,
    pub stages: Vec<Conv2d>,
    pub head: Conv2d,
    pub output: Conv2d,
    taps: Vec<usize>,
}

struct Trace {
    stages: Vec<(Tensor3, Vec<f64>)>,
    head: (Tensor3, Vec<f64>),
    output: (Tensor3, Vec<f64>),
}

fn to_network_input(image: &FloatImage) -> Tensor3 {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut t = Tensor3::zeros(c, h, w);
    for (i, px) in image.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            t.data[ch * w * h + i] = (v - INPUT_MEAN) * INPUT_SCALE;
        }
    }
    t
}

fn to_pixel_gradient(grad: &Tensor3) -> FloatImage {
    let (c, h, w) = grad.shape();
    let mut out = FloatImage::zeros(w, h, c);
    let data = out.data_mut();
    for ch in 0..c {
        for i in 0..w * h {
            data[i * c + ch] = grad.data[ch * w * h + i] * INPUT_SCALE;
        }
    }
    out
}

impl ToyDetector {
    /// Randomly initialized (untrained) detector.
    pub fn new(spec: ToyDetectorSpec) -> Self {
        let mut r = rng::rng(rng::substream(spec.seed, "init"));
        let [c1, c2, c3] = spec.channels;
        let stages = vec![
            Conv2d::new(3, c1, 3, 2, &mut r),
            Conv2d::new(c1, c2, 3, 2, &mut r),
            Conv2d::new(c2, c3, 3, 2, &mut r),
        ];
        let head = Conv2d::new(c3, spec.head_channels, 3, 1, &mut r);
        let mut output = Conv2d::new(spec.head_channels, OUTPUTS, 1, 1, &mut r);
        output.weight.iter_mut().for_each(|w| *w *= 0.1);
        output.bias[0] = -libm::log((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY);
        ToyDetector { spec, stages, head, output, taps: vec![1, 2, 3] }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    fn layers(&self) -> [&Conv2d; 5] {
        [&self.stages[0], &self.stages[1], &self.stages[2], &self.head, &self.output]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn layers_mut(&mut self) -> [&mut Conv2d; 5] {
        let [a, b, c] = &mut self.stages[..] else { unreachable!("toy detector has three stages") };
        [a, b, c, &mut self.head, &mut self.output]
    }

    pub fn unflatten(&mut self, params: &[f64]) {
        let mut offset = 0;
        for l in self.layers_mut() {
            let (nw, nb) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
    }

    /// Checks layer shapes against `self.spec` and that every parameter is finite,
    /// e.g. after deserializing weights.
    pub fn validate(&self) -> Result<()> {
        let [c1, c2, c3] = self.spec.channels;
        let expected = [
            (3, c1, 3, 2),
            (c1, c2, 3, 2),
            (c2, c3, 3, 2),
            (c3, self.spec.head_channels, 3, 1),
            (self.spec.head_channels, OUTPUTS, 1, 1),
        ];
        if self.stages.len() != 3 || self.taps != [1, 2, 3] {
            return Err(Error::input("toy detector needs three tapped stages"));
        }
        for (i, (l, &(ci, co, k, s))) in self.layers().iter().zip(&expected).enumerate() {
            let shape_ok = (l.in_channels, l.out_channels, l.kernel, l.stride) == (ci, co, k, s)
                && l.weight.len() == co * ci * k * k
                && l.bias.len() == co;
            if !shape_ok {
                return Err(Error::input(format!("layer {i} does not match the detector spec")));
            }
            if !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::input(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    fn check_input(&self, image: &FloatImage) -> Result<()> {
        if image.channels() != 3 {
            return Err(Error::input("toy detector expects 3-channel images"));
        }
        if image.width() < 8 || image.height() < 8 {
            return Err(Error::input("toy detector expects images of at least 8x8"));
        }
        Ok(())
    }

    fn forward_backbone(&self, input: &Tensor3) -> Vec<(Tensor3, Vec<f64>)> {
        let mut outs: Vec<(Tensor3, Vec<f64>)> = Vec::with_capacity(3);
        for stage in &self.stages {
            let src = outs.last().map_or(input, |(t, _)| t);
            let (mut t, cols) = if self.spec.antialias { stage.forward(&blur121(src)) } else { stage.forward(src) };
            relu_in_place(&mut t);
            outs.push((t, cols));
        }
        outs
    }

    fn stage_backward(&self, s: usize, g: &Tensor3, height: usize, width: usize) -> Tensor3 {
        let g = self.stages[s].backward_input(g, height, width);
        if self.spec.antialias {
            blur121(&g)
        } else {
            g
        }
    }

    fn forward(&self, image: &FloatImage) -> Trace {
        let input = to_network_input(image);
        let stages = self.forward_backbone(&input);
        let (mut head, head_cols) = self.head.forward(&stages[2].0);
        relu_in_place(&mut head);
        let output = self.output.forward(&head);
        Trace { stages, head: (head, head_cols), output }
    }

    fn decode(&self, out: &Tensor3, width: usize, height: usize) -> Vec<DetectionBox> {
        let (gh, gw) = (out.height, out.width);
        let plane = gh * gw;
        let mut cands = Vec::new();
        for gy in 0..gh {
            for gx in 0..gw {
                let i = gy * gw + gx;
                let score = sigmoid(out.data[i]);
                if score < self.spec.score_threshold {
                    continue;
                }
                let cx = (gx as f64 + 0.5 + out.data[plane + i]) * STRIDE;
                let cy = (gy as f64 + 0.5 + out.data[2 * plane + i]) * STRIDE;
                let bw = self.spec.box_prior * libm::exp(out.data[3 * plane + i].clamp(-4.0, 4.0));
                let bh = self.spec.box_prior * libm::exp(out.data[4 * plane + i].clamp(-4.0, 4.0));
                let b = DetectionBox { x1: cx - bw / 2.0, y1: cy - bh / 2.0, x2: cx + bw / 2.0, y2: cy + bh / 2.0, score };
                if let Some(c) = b.clipped(width, height) {
                    cands.push(c);
                }
            }
        }
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut kept: Vec<DetectionBox> = Vec::new();
        for c in cands {
            if kept.iter().all(|k| iou(k, &c) <= self.spec.nms_iou) {
                kept.push(c);
            }
        }
        kept
    }

    /// Loss and output-layer gradient for one annotated image.
    fn loss_gradient(&self, out: &Tensor3, gt: &GroundTruth) -> (f64, Tensor3) {
        let (gh, gw) = (out.height, out.width);
        let plane = gh * gw;
        let mut targets: Vec<Option<[f64; 4]>> = vec![None; plane];
        for b in &gt.boxes {
            let (cx, cy) = b.center();
            let gx = ((cx / STRIDE) as usize).min(gw - 1);
            let gy = ((cy / STRIDE) as usize).min(gh - 1);
            targets[gy * gw + gx] = Some([
                cx / STRIDE - gx as f64 - 0.5,
                cy / STRIDE - gy as f64 - 0.5,
                libm::log(b.width() / self.spec.box_prior),
                libm::log(b.height() / self.spec.box_prior),
            ]);
        }
        let npos = targets.iter().filter(|t| t.is_some()).count().max(1) as f64;
        let mut grad = out.zeros_like();
        let mut loss = 0.0;
        for (i, target) in targets.iter().enumerate() {
            let z = out.data[i];
            let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
            match *target {
                Some(t) => {
                    let q = 1.0 - p;
                    loss += -FOCAL_ALPHA * libm::pow(q, FOCAL_GAMMA) * libm::log(p) / npos;
                    grad.data[i] =
                        FOCAL_ALPHA * libm::pow(q, FOCAL_GAMMA) * (FOCAL_GAMMA * p * libm::log(p) - q) / npos;
                    for (k, &tk) in t.iter().enumerate() {
                        let d = out.data[(k + 1) * plane + i] - tk;
                        loss += libm::fabs(d) / npos;
                        grad.data[(k + 1) * plane + i] = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / npos;
                    }
                }
                None => {
                    let a = 1.0 - FOCAL_ALPHA;
                    loss += -a * libm::pow(p, FOCAL_GAMMA) * libm::log(1.0 - p) / npos;
                    grad.data[i] = a * libm::pow(p, FOCAL_GAMMA) * (p - FOCAL_GAMMA * (1.0 - p) * libm::log(1.0 - p)) / npos;
                }
            }
        }
        (loss, grad)
    }

    /// Training loss of one image and accumulation of its parameter gradient
    /// into `grads` (same layout as [`ToyDetector::flatten`]).
    fn accumulate(&self, image: &Image, gt: &GroundTruth, grads: &mut [f64]) -> f64 {
        let trace = self.forward(&image.to_float());
        let (loss, g_out) = self.loss_gradient(&trace.output.0, gt);
        let layers = self.layers();
        let mut offsets = [0usize; 5];
        let mut o = 0;
        for (i, l) in layers.iter().enumerate() {
            offsets[i] = o;
            o += l.param_count();
        }
        let mut split = |idx: usize, g: &Tensor3, cols: &[f64]| {
            let l = layers[idx];
            let (gw, rest) = grads[offsets[idx]..].split_at_mut(l.weight.len());
            l.backward_params(g, cols, gw, &mut rest[..l.bias.len()]);
        };
        split(4, &g_out, &trace.output.1);
        let head_in = &trace.stages[2].0;
        let mut g = self.output.backward_input(&g_out, trace.head.0.height, trace.head.0.width);
        relu_backward(&mut g, &trace.head.0);
        split(3, &g, &trace.head.1);
        let mut g = self.head.backward_input(&g, head_in.height, head_in.width);
        for s in (0..3).rev() {
            relu_backward(&mut g, &trace.stages[s].0);
            split(s, &g, &trace.stages[s].1);
            if s > 0 {
                let prev = &trace.stages[s - 1].0;
                g = self.stage_backward(s, &g, prev.height, prev.width);
            }
        }
        loss
    }

    /// Corpus F1 at IoU 0.5 on `scenes`.
    pub fn evaluate(&self, scenes: &[(Image, GroundTruth)]) -> Result<Counts> {
        let mut counts = Counts::default();
        for (img, gt) in scenes {
            counts.add(&match_detections(&self.detect(img)?, gt, DEFAULT_IOU_THRESHOLD));
        }
        Ok(counts)
    }
}

impl Detector for ToyDetector {
    fn taps(&self) -> &[usize] {
        &self.taps
    }

    fn threshold(&self) -> f64 {
        self.spec.score_threshold
    }

    fn detect(&self, image: &Image) -> Result<DetectionSet> {
        image.ensure_rgb()?;
        let f = image.to_float();
        self.check_input(&f)?;
        let trace = self.forward(&f);
        let boxes = self.decode(&trace.output.0, image.width(), image.height());
        Ok(DetectionSet::new("", boxes, self.spec.score_threshold))
    }

    fn extract_features(&self, image: &FloatImage) -> Result<FeatureSet> {
        self.check_input(image)?;
        let stages = self.forward_backbone(&to_network_input(image));
        FeatureSet::new(self.taps.clone(), stages.into_iter().map(|(t, _)| t).collect())
    }

    fn gradient(&self, image: &FloatImage, objective: &dyn FeatureObjective) -> Result<GradientResult> {
        self.check_input(image)?;
        let input = to_network_input(image);
        let stages = self.forward_backbone(&input);
        let features =
            FeatureSet::new(self.taps.clone(), stages.iter().map(|(t, _)| t.clone()).collect())?;
        let (value, direct) = objective.evaluate(&features)?;
        let value = check_objective(value, "toy detector gradient")?;
        if direct.len() != 3 || direct.tensors.iter().zip(&features.tensors).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::input("objective gradient does not match feature shapes"));
        }
        // Walk down the backbone; `total[i]` is dL/dh_i including every path
        // through deeper taps.
        let mut totals: Vec<Tensor3> = Vec::with_capacity(3);
        let mut carry: Option<Tensor3> = None;
        for s in (0..3).rev() {
            let mut total = direct.tensors[s].clone();
            if let Some(c) = carry.take() {
                total.add_assign(&c);
            }
            let mut g = total.clone();
            relu_backward(&mut g, &stages[s].0);
            let (h, w) = if s == 0 { (input.height, input.width) } else { (stages[s - 1].0.height, stages[s - 1].0.width) };
            carry = Some(self.stage_backward(s, &g, h, w));
            totals.push(total);
        }
        totals.reverse();
        let input_grad = to_pixel_gradient(&carry.expect("three stages"));
        if !input_grad.all_finite() {
            return Err(Error::Numerical { message: "non-finite input gradient".into(), values: vec![value] });
        }
        Ok(GradientResult { value, input: input_grad, features: FeatureSet::new(self.taps.clone(), totals)? })
    }
}

fn clip_norm(grads: &mut [f64], max_norm: f64) {
    let norm = libm::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

/// Held-out scenes used by [`train_toy_detector`] for its report.
pub fn validation_scenes(spec: &ToyDetectorSpec, count: usize) -> Result<Vec<(Image, GroundTruth)>> {
    let cfg = SceneConfig { seed: rng::substream(spec.seed, "val"), ..spec.scene.clone() };
    (0..count as u64).map(|i| generate_scene(&cfg, i)).collect()
}

/// Trains a detector on `train_count` generated scenes and reports its F1 on
/// `val_count` held-out scenes. Single-threaded and seed-deterministic.
pub fn train_toy_detector(
    spec: &ToyDetectorSpec,
    train_count: usize,
    val_count: usize,
) -> Result<(ToyDetector, TrainingReport)> {
    if train_count == 0 || val_count == 0 {
        return Err(Error::config("train and validation counts must be at least 1"));
    }
    if spec.batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    spec.scene.validate()?;
    let mut model = ToyDetector::new(spec.clone());
    let train_cfg = SceneConfig { seed: rng::substream(spec.seed, "train"), ..spec.scene.clone() };
    let train: Vec<(Image, GroundTruth)> =
        (0..train_count as u64).map(|i| generate_scene(&train_cfg, i)).collect::<Result<_>>()?;
    let mut params = model.flatten();
    let mut adam = Adam::new(params.len(), spec.learning_rate);
    let mut order: Vec<usize> = (0..train_count).collect();
    let mut shuffle = rng::rng(rng::substream(spec.seed, "shuffle"));
    let mut history = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        // step decay at 60% and 85% of training
        let progress = epoch as f64 / spec.epochs as f64;
        adam.learning_rate = spec.learning_rate * if progress >= 0.85 { 0.05 } else if progress >= 0.6 { 0.25 } else { 1.0 };
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let mut grads = vec![0.0; params.len()];
            for &i in batch {
                let (img, gt) = &train[i];
                epoch_loss += model.accumulate(img, gt, &mut grads);
            }
            grads.iter_mut().for_each(|g| *g /= batch.len() as f64);
            clip_norm(&mut grads, GRAD_CLIP);
            adam.step(&mut params, &grads);
            model.unflatten(&params);
        }
        let mean = epoch_loss / train_count as f64;
        history.push(mean);
        if !mean.is_finite() || !params.iter().all(|p| p.is_finite()) {
            return Err(Error::Training { epoch, loss: mean, history });
        }
    }
    let scores = model.evaluate(&validation_scenes(spec, val_count)?)?.scores();
    let report = TrainingReport {
        clean_f1: scores.f1,
        precision: scores.precision,
        recall: scores.recall,
        epochs: spec.epochs,
        seed: spec.seed,
        train_count,
        val_count,
        score_threshold: spec.score_threshold,
        loss_history: history,
    };
    Ok((model, report))
}
