use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackConfig};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::eval::{match_detections, Counts, DEFAULT_IOU_THRESHOLD};
use crate::image::{FloatImage, Image, Perturbation};
use crate::rng;
use crate::video::flow::{FlowEstimator, FlowField};
use crate::video::warp::warp_perturbation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PropagationMode {
    /// Attack every frame.
    Full,
    /// Reuse the first frame's perturbation unchanged.
    Fixed,
    /// Warp with forward flow only.
    Forward,
    /// Average forward and reversed backward warps.
    Bidirectional,
}

impl PropagationMode {
    pub const ALL: [PropagationMode; 4] =
        [PropagationMode::Full, PropagationMode::Fixed, PropagationMode::Forward, PropagationMode::Bidirectional];

    pub fn name(self) -> &'static str {
        match self {
            PropagationMode::Full => "full",
            PropagationMode::Fixed => "fixed",
            PropagationMode::Forward => "forward",
            PropagationMode::Bidirectional => "bidirectional",
        }
    }
}

impl fmt::Display for PropagationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for PropagationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PropagationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown propagation mode '{s}'")))
    }
}

/// Where non-anchor perturbations are warped from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Chaining {
    /// From the previous frame's realized perturbation.
    #[default]
    Previous,
    /// Directly from the most recent anchor.
    Anchor,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AnchorSchedule {
    /// Frames `v` with `v % anchor_period == 0` are attacked directly.
    pub anchor_period: usize,
    /// Frames `v` with `v % eval_interval == 0` enter the video F1.
    pub eval_interval: usize,
    pub chaining: Chaining,
    pub iou_threshold: f64,
}

impl Default for AnchorSchedule {
    fn default() -> Self {
        AnchorSchedule { anchor_period: 15, eval_interval: 5, chaining: Chaining::Previous, iou_threshold: DEFAULT_IOU_THRESHOLD }
    }
}

impl AnchorSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.anchor_period == 0 || self.eval_interval == 0 {
            return Err(Error::config(String::from("anchor period and eval interval must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::config(String::from("iou threshold must be in [0, 1]")));
        }
        Ok(())
    }

    pub fn is_anchor(&self, frame: usize) -> bool {
        frame % self.anchor_period == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<Image>,
    pub fps: f64,
}

impl VideoSequence {
    pub fn new(frames: Vec<Image>, fps: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::input("video has no frames"));
        };
        if frames.iter().any(|f| !f.same_shape(first)) {
            return Err(Error::input("video frames differ in shape"));
        }
        first.ensure_rgb()?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::input("fps must be positive"));
        }
        Ok(VideoSequence { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FrameReport {
    pub frame: usize,
    pub mode: PropagationMode,
    /// Anchor this frame's perturbation descends from.
    pub anchor: usize,
    pub attacked: bool,
    pub evaluated: bool,
    pub counts: Counts,
    pub f1: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PropagationReport {
    pub mode: PropagationMode,
    pub frames: Vec<FrameReport>,
    pub attack_invocations: usize,
    pub flow_computations: usize,
    /// Counts pooled over evaluated frames.
    pub counts: Counts,
    pub video_f1: f64,
}

impl PropagationReport {
    fn new(mode: PropagationMode) -> Self {
        PropagationReport {
            mode,
            frames: Vec::new(),
            attack_invocations: 0,
            flow_computations: 0,
            counts: Counts::default(),
            video_f1: 0.0,
        }
    }
}

/// A run that stopped partway; carries what was produced before the failure.
#[derive(Debug)]
pub struct PropagationFailure {
    pub frame: usize,
    pub frames: Vec<Image>,
    pub report: PropagationReport,
    pub source: Error,
}

impl fmt::Display for PropagationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "propagation failed at frame {}: {}", self.frame, self.source)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PropagationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Per-frame attack configuration: seeds depend only on the frame index, so
/// an anchor period of one reproduces per-frame attacks exactly.
pub fn frame_attack_config(base: &AttackConfig, frame: usize) -> AttackConfig {
    let mut cfg = base.clone();
    cfg.seed = rng::child(base.seed, frame as u64);
    cfg.guidance.seed = rng::child(base.guidance.seed, frame as u64);
    cfg
}

fn average(a: &Perturbation, b: &Perturbation) -> Perturbation {
    let data = a.as_float().data().iter().zip(b.as_float().data()).map(|(x, y)| 0.5 * (x + y)).collect();
    let f = a.as_float();
    Perturbation(FloatImage::from_raw(f.width(), f.height(), f.channels(), data).expect("same shape"))
}

struct Runner<'a> {
    video: &'a VideoSequence,
    model: &'a dyn Detector,
    attack: &'a AttackConfig,
    flow: &'a dyn FlowEstimator,
    report: PropagationReport,
}

impl Runner<'_> {
    fn attack(&mut self, frame: usize) -> Result<Image> {
        self.report.attack_invocations += 1;
        let cfg = frame_attack_config(self.attack, frame);
        Ok(run_attack(self.model, &self.video.frames[frame], &cfg)?.0)
    }

    fn flow(&mut self, from: usize, to: usize) -> Result<FlowField> {
        self.report.flow_computations += 1;
        let mut f = self.flow.estimate(&self.video.frames[from], &self.video.frames[to])?;
        f.source = from;
        f.target = to;
        Ok(f)
    }

    /// Moves the perturbation living on frame `from` onto frame `to`.
    fn carry(&mut self, delta: &Perturbation, from: usize, to: usize, mode: PropagationMode) -> Result<Perturbation> {
        let forward = warp_perturbation(delta, &self.flow(from, to)?)?;
        if mode != PropagationMode::Bidirectional {
            return Ok(forward);
        }
        let backward = warp_perturbation(delta, &self.flow(to, from)?.negated())?;
        Ok(average(&forward, &backward))
    }
}

/// Protects every frame of `video` and scores each against detections on the
/// corresponding clean frame.
pub fn propagate(
    video: &VideoSequence,
    model: &dyn Detector,
    attack: &AttackConfig,
    schedule: &AnchorSchedule,
    mode: PropagationMode,
    flow: &dyn FlowEstimator,
) -> core::result::Result<(VideoSequence, PropagationReport), Box<PropagationFailure>> {
    let mut runner = Runner { video, model, attack, flow, report: PropagationReport::new(mode) };
    let mut out: Vec<Image> = Vec::with_capacity(video.len());
    let fail = |frame: usize, out: Vec<Image>, report: PropagationReport, source: Error| {
        Box::new(PropagationFailure { frame, frames: out, report, source })
    };
    let setup = schedule.validate().and_then(|_| attack.validate(model.tap_count())).and_then(|_| {
        VideoSequence::new(video.frames.clone(), video.fps).map(|_| ())
    });
    if let Err(e) = setup {
        return Err(fail(0, out, runner.report, e));
    }
    let eps = attack.epsilon;
    let mut anchor = 0usize;
    let mut anchor_delta: Option<Perturbation> = None;

    for v in 0..video.len() {
        let clean = &video.frames[v];
        let result: Result<(Image, bool)> = (|| {
            let attacked = match mode {
                PropagationMode::Full => true,
                PropagationMode::Fixed => v == 0,
                PropagationMode::Forward | PropagationMode::Bidirectional => schedule.is_anchor(v),
            };
            if attacked {
                return Ok((runner.attack(v)?, true));
            }
            let image = match mode {
                PropagationMode::Fixed => anchor_delta.as_ref().expect("frame 0 is attacked").apply(clean, eps)?,
                _ => {
                    let (source, delta) = match schedule.chaining {
                        Chaining::Previous => (v - 1, Perturbation::between(&out[v - 1], &video.frames[v - 1])?),
                        Chaining::Anchor => (anchor, anchor_delta.clone().expect("anchor precedes frame")),
                    };
                    runner.carry(&delta, source, v, mode)?.apply(clean, eps)?
                }
            };
            Ok((image, false))
        })();
        let (image, attacked) = match result {
            Ok(r) => r,
            Err(e) => return Err(fail(v, out, runner.report, e)),
        };
        let delta = match Perturbation::between(&image, clean) {
            Ok(d) => d,
            Err(e) => return Err(fail(v, out, runner.report, e)),
        };
        if attacked {
            anchor = v;
            anchor_delta = Some(delta.clone());
        }
        let evaluated = v % schedule.eval_interval == 0;
        let scored = model.detect(clean).and_then(|c| Ok((c, model.detect(&image)?)));
        let (clean_det, adv_det) = match scored {
            Ok(p) => p,
            Err(e) => return Err(fail(v, out, runner.report, e)),
        };
        let mut counts = Counts::default();
        counts.add(&match_detections(&adv_det, &clean_det.to_ground_truth(), schedule.iou_threshold));
        if evaluated {
            runner.report.counts.merge(counts);
        }
        runner.report.frames.push(FrameReport {
            frame: v,
            mode,
            anchor,
            attacked,
            evaluated,
            f1: counts.scores().f1,
            counts,
            linf: delta.linf(),
        });
        out.push(image);
    }
    runner.report.video_f1 = runner.report.counts.scores().f1;
    let report = runner.report;
    Ok((VideoSequence { frames: out, fps: video.fps }, report))
}
