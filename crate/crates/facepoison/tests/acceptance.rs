//! Acceptance gate A1-A12 on the built-in toy pipeline.
//!
//! One ordered run: the trained detector is cached under the cargo target
//! tmpdir and reused while its spec matches the defaults. Each criterion
//! prints a PASS/FAIL line straight to stderr; the test fails if any does.
//! `FACEPOISON_ACCEPTANCE=A2,A8` restricts the run while iterating locally.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use facepoison::codec::JpegCodec;
use facepoison::io::{read_json, write_png};
use facepoison::weights::{save_weights, WeightsFile};
use facepoison_core::attack::{run_attack, run_attack_observed, AttackConfig, Method};
use facepoison_core::eval::{iou, match_detections, robustness_suite, ssim, Counts, RobustnessSpec};
use facepoison_core::guidance::{importance_maps, pseudo_objective_gradient, GuidanceConfig, PseudoObjective};
use facepoison_core::attack::GuidedObjective;
use facepoison_core::rng;
use facepoison_core::synth::scene::{generate_scene, translating_video, SceneConfig};
use facepoison_core::synth::toy::{train_toy_detector, ToyDetector, ToyDetectorSpec, TrainingReport};
use facepoison_core::video::{
    compute_flow, propagate, warp_perturbation, AnchorSchedule, FlowField, HornSchunck, PropagationMode, VideoSequence,
};
use facepoison_core::{
    DetectionBox, DetectionSet, Detector, FeatureObjective, FloatImage, GroundTruth, Image, Perturbation, Tensor3,
};
use rand::Rng as _;

const TRAIN_SCENES: usize = 2000;
const VAL_SCENES: usize = 200;
const HELD_OUT: usize = 200;

struct Fixture {
    model: ToyDetector,
    report: TrainingReport,
    train_secs: f64,
    cached: bool,
    weights: PathBuf,
    held_out: Vec<(Image, GroundTruth)>,
}

fn work_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

static FIXTURE_LOCK: Mutex<()> = Mutex::new(());

fn fixture() -> Fixture {
    let _guard = FIXTURE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let spec = ToyDetectorSpec::default();
    let dir = work_dir();
    let weights = dir.join("toy.w");
    let timing = dir.join("toy.train_secs");
    let cached = read_json::<WeightsFile>(&weights).ok().and_then(|f| {
        let secs = std::fs::read_to_string(&timing).ok()?.trim().parse::<f64>().ok()?;
        let report = f.report?;
        let same = f.model.spec == spec && report.train_count == TRAIN_SCENES && report.val_count == VAL_SCENES;
        same.then_some((f.model, report, secs))
    });
    let (model, report, train_secs, cached) = match cached {
        Some((m, r, s)) => (m, r, s, true),
        None => {
            let started = Instant::now();
            let (m, r) = train_toy_detector(&spec, TRAIN_SCENES, VAL_SCENES).unwrap();
            let secs = started.elapsed().as_secs_f64();
            save_weights(&weights, &m, Some(&r)).unwrap();
            std::fs::write(&timing, format!("{secs}\n")).unwrap();
            (m, r, secs, false)
        }
    };
    let test_cfg = SceneConfig { seed: rng::substream(spec.seed, "test"), ..spec.scene.clone() };
    let held_out = (0..HELD_OUT as u64).map(|i| generate_scene(&test_cfg, i).unwrap()).collect();
    Fixture { model, report, train_secs, cached, weights, held_out }
}

struct Gate {
    only: Option<Vec<String>>,
    failed: Vec<&'static str>,
}

impl Gate {
    fn wants(&self, id: &str) -> bool {
        self.only.as_ref().map_or(true, |o| o.iter().any(|s| s == id))
    }

    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        let line = format!("{id} {} {detail}\n", if pass { "PASS" } else { "FAIL" });
        let _ = std::io::stderr().write_all(line.as_bytes());
        if !pass {
            self.failed.push(id);
        }
    }
}

fn evaluate(model: &dyn Detector, images: &[Image], truth: &[GroundTruth]) -> Counts {
    let mut c = Counts::default();
    for (img, gt) in images.iter().zip(truth) {
        c.add(&match_detections(&model.detect(img).unwrap(), gt, 0.5));
    }
    c
}

fn attack_config(method: Method, index: usize) -> AttackConfig {
    let mut cfg = AttackConfig::with_method(method);
    cfg.seed = rng::child(rng::substream(0, "attack"), index as u64);
    cfg.guidance.seed = rng::child(rng::substream(0, "mask"), index as u64);
    cfg
}

/// Protects every image; returns the outputs and mean wall seconds per image.
fn protect_all(model: &dyn Detector, images: &[Image], cfg: impl Fn(usize) -> AttackConfig) -> (Vec<Image>, f64) {
    let started = Instant::now();
    let out: Vec<Image> = images.iter().enumerate().map(|(i, img)| run_attack(model, img, &cfg(i)).unwrap().0).collect();
    (out, started.elapsed().as_secs_f64() / images.len() as f64)
}

fn split(scenes: &[(Image, GroundTruth)]) -> (Vec<Image>, Vec<GroundTruth>) {
    scenes.iter().cloned().unzip()
}

fn a1(gate: &mut Gate, fx: &Fixture) {
    let (images, truth) = split(&fx.held_out);
    let f1 = evaluate(&fx.model, &images, &truth).scores().f1;
    let pass = f1 >= 0.90 && fx.report.clean_f1 >= 0.90 && fx.train_secs <= 15.0 * 60.0;
    let origin = if fx.cached { " (cached weights)" } else { "" };
    gate.record(
        "A1",
        pass,
        format!(
            "fixture gate: held-out F1 {f1:.3}, validation F1 {:.3} (>= 0.90); training {:.0}s{origin} (<= 900s)",
            fx.report.clean_f1, fx.train_secs
        ),
    );
}

fn a2(gate: &mut Gate, fx: &Fixture) -> Option<Vec<Image>> {
    let (images, truth) = split(&fx.held_out);
    let clean = evaluate(&fx.model, &images, &truth).scores().f1;
    let mut kept = None;
    let mut details = vec![format!("clean {clean:.3}")];
    let mut pass = clean >= 0.90;
    for method in [Method::AdaBim, Method::AdaDimPlusPlus] {
        let (protected, secs) = protect_all(&fx.model, &images, |i| attack_config(method, i));
        let f1 = evaluate(&fx.model, &protected, &truth).scores().f1;
        pass &= f1 <= 0.20 && secs <= 2.0;
        details.push(format!("{method} F1 {f1:.3} at {secs:.2}s/image"));
        if method == Method::AdaDimPlusPlus {
            kept = Some(protected);
        }
    }
    gate.record("A2", pass, format!("attack collapse on {HELD_OUT} scenes: {} (<= 0.20, <= 2s)", details.join(", ")));
    kept
}

fn a3(gate: &mut Gate, fx: &Fixture) {
    let (images, truth) = split(&fx.held_out);
    let noisy: Vec<Image> = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = rng::rng(rng::child(rng::substream(0, "uniform-noise"), i as u64));
            let mut out = img.clone();
            for v in out.data_mut() {
                *v = (*v as f64 + r.random_range(-8.0..=8.0)).round().clamp(0.0, 255.0) as u8;
            }
            out
        })
        .collect();
    let clean = evaluate(&fx.model, &images, &truth).scores().f1;
    let noise = evaluate(&fx.model, &noisy, &truth).scores().f1;
    let delta = (clean - noise).abs();
    gate.record("A3", delta <= 0.05, format!("random noise control: F1 {clean:.3} -> {noise:.3}, |delta| {delta:.3} (<= 0.05)"));
}

fn a4(gate: &mut Gate, fx: &Fixture) {
    let n = 50;
    let (images, truth) = split(&fx.held_out[..n]);
    let f1_for = |layers: Vec<usize>| {
        let (protected, _) = protect_all(&fx.model, &images, |i| {
            let mut cfg = attack_config(Method::AdaBim, i);
            cfg.guidance.layers = layers.clone();
            cfg
        });
        evaluate(&fx.model, &protected, &truth).scores().f1
    };
    let singles: Vec<f64> = (1..=3).map(|l| f1_for(vec![l])).collect();
    let all = f1_for(vec![1, 2, 3]);
    let best = singles.iter().copied().fold(f64::INFINITY, f64::min);
    gate.record(
        "A4",
        all <= best + 0.02,
        format!(
            "layer ablation on {n} scenes: F1 {{1}} {:.3}, {{2}} {:.3}, {{3}} {:.3}, {{1,2,3}} {all:.3} (<= {:.3})",
            singles[0],
            singles[1],
            singles[2],
            best + 0.02
        ),
    );
}

fn random_config(r: &mut rng::Rng, seed: u64) -> AttackConfig {
    let method = Method::ALL[r.random_range(0..Method::ALL.len())];
    let mut cfg = AttackConfig::with_method(method);
    cfg.epsilon = match r.random_range(0..4) {
        0 => 0.0,
        1 => r.random_range(1..=16) as f64,
        _ => r.random_range(0.0..16.0),
    };
    cfg.iterations = r.random_range(1..=4);
    if r.random_bool(0.3) {
        cfg.step = Some(r.random_range(0.0..=2.0 * cfg.epsilon + 1.0));
    }
    cfg.momentum = r.random_range(0.0..=1.0);
    cfg.guidance = GuidanceConfig {
        mask_probability: r.random_range(0.0..=1.0),
        samples: r.random_range(1..=3),
        seed: rng::child(seed, 1),
        layers: {
            let mut l: Vec<usize> = (1..=3).filter(|_| r.random_bool(0.6)).collect();
            if l.is_empty() {
                l.push(r.random_range(1..=3));
            }
            l
        },
        ..GuidanceConfig::default()
    };
    cfg.dim.probability = r.random_range(0.0..=1.0);
    cfg.dim.resize_min = r.random_range(0.6..=1.0);
    cfg.spectrum.samples = r.random_range(1..=2);
    cfg.spectrum.neighbors = r.random_range(0..=2);
    cfg.spectrum.sigma = r.random_range(0.0..=32.0);
    cfg.spectrum.rho = r.random_range(0.0..=1.0);
    cfg.seed = seed;
    cfg
}

fn a5(gate: &mut Gate, fx: &Fixture) {
    let cases = 500;
    let mut r = rng::rng(rng::substream(0, "fuzz"));
    let mut violations = 0usize;
    let mut iterates = 0usize;
    for case in 0..cases {
        let (w, h) = (r.random_range(16..=40), r.random_range(16..=40));
        let image = if r.random_bool(0.5) {
            let data: Vec<u8> = (0..w * h * 3).map(|_| r.random()).collect();
            Image::from_raw(w, h, 3, data).unwrap()
        } else {
            let cfg = SceneConfig { image_size: 40, faces_max: 1, seed: case, ..SceneConfig::default() };
            let (scene, _) = generate_scene(&cfg, 0).unwrap();
            Image::from_fn(w, h, |x, y| {
                let p = scene.pixel(x, y);
                [p[0], p[1], p[2]]
            })
        };
        let cfg = random_config(&mut r, rng::child(rng::substream(0, "fuzz-seed"), case));
        let eps = cfg.epsilon;
        let origin = image.to_float();
        let mut bad = 0usize;
        let result = run_attack_observed(&fx.model, &image, &cfg, &mut |s| {
            iterates += 1;
            let ok = s
                .adversarial
                .data()
                .iter()
                .zip(origin.data())
                .all(|(&a, &x)| (0.0..=255.0).contains(&a) && (a - x).abs() <= eps + 1e-9);
            bad += usize::from(!ok);
        });
        let (out, report) = result.unwrap();
        let linf = image.data().iter().zip(out.data()).map(|(&x, &o)| (o as f64 - x as f64).abs()).fold(0.0, f64::max);
        let shape_ok = out.same_shape(&image);
        let reported = report.perturbation.as_ref().map_or(0.0, |p| p.linf());
        if bad > 0 || linf > eps || !shape_ok || reported > eps {
            violations += 1;
        }
    }
    gate.record(
        "A5",
        violations == 0,
        format!("bound invariant: {cases} fuzzed configs, {iterates} iterates checked, {violations} violations (== 0)"),
    );
}

/// Relative agreement between an analytic gradient and central differences at
/// random coordinates. Coordinates whose magnitudes are both below `floor`
/// are compared on the floor scale.
fn finite_difference_check(
    model: &ToyDetector,
    at: &FloatImage,
    objective: &dyn FeatureObjective,
    coords: usize,
    r: &mut rng::Rng,
) -> (usize, usize) {
    let analytic = model.gradient(at, objective).unwrap().input;
    let gmax = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * gmax;
    let value = |x: &FloatImage| objective.evaluate(&model.extract_features(x).unwrap()).unwrap().0;
    let h = 1e-3;
    let mut pass = 0;
    for _ in 0..coords {
        let k = r.random_range(0..at.len());
        let mut plus = at.clone();
        plus.data_mut()[k] += h;
        let mut minus = at.clone();
        minus.data_mut()[k] -= h;
        let fd = (value(&plus) - value(&minus)) / (2.0 * h);
        let g = analytic.data()[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
        pass += usize::from(rel <= 1e-3);
    }
    (pass, coords)
}

fn a6(gate: &mut Gate, fx: &Fixture) {
    let cfg = SceneConfig { image_size: 64, faces_max: 1, seed: 11, ..SceneConfig::default() };
    let (image, _) = generate_scene(&cfg, 0).unwrap();
    let (other, _) = generate_scene(&cfg, 1).unwrap();
    let mut r = rng::rng(rng::substream(0, "finite-difference"));
    let at = image.to_float().map(|v| (v + 3.0).min(250.0));
    let guidance = GuidanceConfig { samples: 4, ..GuidanceConfig::default() };
    let maps = importance_maps(&fx.model, &image, &guidance).unwrap();
    let weights = [0.2, 0.3, 0.5];
    let guided = GuidedObjective { maps: &maps, weights: &weights };
    let (p1, n1) = finite_difference_check(&fx.model, &at, &guided, 500, &mut r);
    let reference = fx.model.extract_features(&other.to_float()).unwrap().last().clone();
    let pseudo = PseudoObjective { reference };
    let (p2, n2) = finite_difference_check(&fx.model, &at, &pseudo, 500, &mut r);
    let share = (p1 + p2) as f64 / (n1 + n2) as f64;
    gate.record(
        "A6",
        share >= 0.95,
        format!(
            "gradient check: {p1}/{n1} feature-objective and {p2}/{n2} cosine-objective coordinates within 1e-3 ({:.1}% >= 95%)",
            share * 100.0
        ),
    );
}

fn a7(gate: &mut Gate) {
    let mut r = rng::rng(rng::substream(0, "stationarity"));
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (c, h, w) = (r.random_range(1..=16), r.random_range(1..=12), r.random_range(1..=12));
        let scale = 10f64.powf(r.random_range(-3.0..=3.0));
        let data: Vec<f64> = (0..c * h * w).map(|_| scale * rng::normal(&mut r)).collect();
        let t = Tensor3::from_vec(c, h, w, data).unwrap();
        let (_, g) = pseudo_objective_gradient(&t, &t).unwrap();
        worst = worst.max(g.max_abs());
    }
    gate.record("A7", worst <= 1e-6, format!("cosine stationarity: max |grad| {worst:.2e} on 20 tensors (<= 1e-6)"));
}

fn translating_fixture(fx: &Fixture) -> VideoSequence {
    let frames: Vec<Image> =
        translating_video(&fx.model.spec.scene, 0, 60, 1.0, 0.0).unwrap().into_iter().map(|(f, _)| f).collect();
    VideoSequence::new(frames, 30.0).unwrap()
}

fn a8(gate: &mut Gate, fx: &Fixture) {
    let video = translating_fixture(fx);
    let schedule = AnchorSchedule::default();
    let attack = attack_config(Method::AdaBim, 0);
    let flow = HornSchunck::default();
    let run = |mode| propagate(&video, &fx.model, &attack, &schedule, mode, &flow).map_err(|e| e.to_string()).unwrap().1;
    let full = run(PropagationMode::Full);
    let bi = run(PropagationMode::Bidirectional);
    let fixed = run(PropagationMode::Fixed);
    let forward = run(PropagationMode::Forward);
    let pass = full.video_f1 <= bi.video_f1 && bi.video_f1 <= fixed.video_f1 && bi.attack_invocations == 4;
    gate.record(
        "A8",
        pass,
        format!(
            "video ordering: F1 full {:.3} <= bidirectional {:.3} <= fixed {:.3} (forward {:.3}); bidirectional attacks {} (== 4)",
            full.video_f1, bi.video_f1, fixed.video_f1, forward.video_f1, bi.attack_invocations
        ),
    );
}

fn roll_and_zero(p: &Perturbation, dx: i64, dy: i64) -> Perturbation {
    let src = p.as_float();
    let (w, h, c) = (src.width() as i64, src.height() as i64, src.channels());
    let mut out = FloatImage::zeros(src.width(), src.height(), c);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x - dx, y - dy);
            if sx < 0 || sy < 0 || sx >= w || sy >= h {
                continue;
            }
            for ch in 0..c {
                out.data_mut()[((y * w + x) as usize) * c + ch] = src.data()[((sy * w + sx) as usize) * c + ch];
            }
        }
    }
    Perturbation(out)
}

fn crop(img: &Image, x0: usize, y0: usize, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| {
        let p = img.pixel(x0 + x, y0 + y);
        [p[0], p[1], p[2]]
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn a9(gate: &mut Gate) {
    let mut r = rng::rng(rng::substream(0, "warp"));
    let (w, h) = (48, 40);
    let data: Vec<f64> = (0..w * h * 3).map(|_| r.random_range(-8.0..=8.0)).collect();
    let p = Perturbation(FloatImage::from_raw(w, h, 3, data).unwrap());
    let identity = warp_perturbation(&p, &FlowField::zeros(w, h)).unwrap() == p;
    let shifts = [(3i64, -2i64), (-5, 4), (0, 7), (12, 0)];
    let exact = shifts.iter().all(|&(dx, dy)| {
        warp_perturbation(&p, &FlowField::uniform(w, h, dx as f64, dy as f64)).unwrap() == roll_and_zero(&p, dx, dy)
    });
    let cfg = SceneConfig { image_size: 160, seed: 21, ..SceneConfig::default() };
    let (scene, _) = generate_scene(&cfg, 0).unwrap();
    let (dx, dy) = (2usize, 1usize);
    let from = crop(&scene, 16, 16, 128, 128);
    let to = crop(&scene, 16 - dx, 16 - dy, 128, 128);
    let flow = compute_flow(&from, &to).unwrap();
    let mx = median(flow.data.chunks_exact(2).map(|f| f[0]).collect());
    let my = median(flow.data.chunks_exact(2).map(|f| f[1]).collect());
    let recovered = (mx - dx as f64).abs() <= 0.5 && (my - dy as f64).abs() <= 0.5;
    gate.record(
        "A9",
        identity && exact && recovered,
        format!(
            "warp oracles: zero-flow identity {identity}, integer shifts exact {exact}, median flow ({mx:.2}, {my:.2}) vs ({dx}, {dy}) within 0.5"
        ),
    );
}

fn boxed(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> DetectionBox {
    DetectionBox::new(x1, y1, x2, y2, score).unwrap()
}

fn a10(gate: &mut Gate) {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let a = boxed(0.0, 0.0, 10.0, 10.0, 1.0);
    checks.push(("iou identical", iou(&a, &a) == 1.0));
    checks.push(("iou disjoint", iou(&a, &boxed(20.0, 20.0, 30.0, 30.0, 1.0)) == 0.0));
    checks.push(("iou half shift", (iou(&a, &boxed(5.0, 0.0, 15.0, 10.0, 1.0)) - 1.0 / 3.0).abs() <= 1e-4));

    let gt = |boxes: Vec<DetectionBox>| GroundTruth::new("g", boxes);
    let pred = |boxes: Vec<DetectionBox>| DetectionSet::new("p", boxes, 0.0);
    let empty = match_detections(&pred(vec![]), &gt(vec![]), 0.5);
    checks.push(("empty match", (empty.true_positives, empty.false_positives, empty.false_negatives) == (0, 0, 0)));
    // 10x10 box against one shifted by 2.5: IoU 75/125 = 0.6
    let one = match_detections(&pred(vec![boxed(2.5, 0.0, 12.5, 10.0, 0.9)]), &gt(vec![a]), 0.5);
    checks.push(("iou 0.6 match", (one.true_positives, one.false_positives, one.false_negatives) == (1, 0, 0)));
    let two = match_detections(
        &pred(vec![boxed(0.0, 0.0, 10.0, 10.0, 0.9), boxed(1.0, 0.0, 11.0, 10.0, 0.8)]),
        &gt(vec![a]),
        0.5,
    );
    checks.push(("one-to-one", (two.true_positives, two.false_positives) == (1, 1)));

    let f = |tp, fp, fn_| Counts { true_positives: tp, false_positives: fp, false_negatives: fn_ }.scores().f1;
    checks.push(("perfect f1", f(4, 0, 0) == 1.0));
    checks.push(("p1 r0.5 f1", (f(2, 0, 2) - 2.0 / 3.0).abs() <= 1e-4));
    checks.push(("zero f1", f(0, 3, 3) == 0.0 && f(0, 0, 0) == 0.0));

    let mut r = rng::rng(rng::substream(0, "ssim"));
    let mut noise = |w, h| {
        let data: Vec<u8> = (0..w * h * 3).map(|_| r.random()).collect();
        Image::from_raw(w, h, 3, data).unwrap()
    };
    let (x, y) = (noise(40, 32), noise(40, 32));
    checks.push(("ssim identity", (ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-9));
    checks.push(("ssim symmetry", (ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() <= 1e-9));
    let black = Image::from_fn(32, 32, |_, _| [0, 0, 0]);
    let white = Image::from_fn(32, 32, |_, _| [255, 255, 255]);
    checks.push(("ssim black/white", ssim(&black, &white).unwrap() <= 0.01));

    let truth = gt(vec![a, boxed(20.0, 0.0, 30.0, 10.0, 1.0), boxed(40.0, 0.0, 50.0, 10.0, 1.0)]);
    let perfect: Vec<DetectionBox> = truth.boxes.iter().map(|b| DetectionBox { score: 0.9, ..*b }).collect();
    let mut previous = Counts::from(&match_detections(&pred(perfect.clone()), &truth, 0.5)).scores().f1;
    let mut strictly = previous == 1.0;
    for k in 1..=10 {
        let mut boxes = perfect.clone();
        boxes.extend((0..k).map(|j| boxed(100.0 + 20.0 * j as f64, 50.0, 110.0 + 20.0 * j as f64, 60.0, 0.6)));
        let f1 = Counts::from(&match_detections(&pred(boxes), &truth, 0.5)).scores().f1;
        strictly &= f1 < previous;
        previous = f1;
    }
    checks.push(("redundant proposals", strictly));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        format!("metric arithmetic: {} checks", checks.len())
    } else {
        format!("metric arithmetic: failed {}", failed.join(", "))
    };
    gate.record("A10", failed.is_empty(), detail);
}

fn a11(gate: &mut Gate, fx: &Fixture, protected: &[Image]) {
    let (images, truth) = split(&fx.held_out);
    let spec = RobustnessSpec { seed: rng::substream(0, "transform"), ..RobustnessSpec::default() };
    let table = robustness_suite(protected, &images, &truth, &fx.model, &spec, &JpegCodec).unwrap();
    let expected_rows = 1 + spec.sweeps.iter().map(|s| s.settings.len()).sum::<usize>();
    let complete = table.rows.len() == expected_rows && table.rows.iter().all(|r| r.error.is_none());
    let q90 = table.find("recompress", 90.0).and_then(|r| r.scores).map_or(f64::NAN, |s| s.f1);
    let pass = complete && q90 <= 0.5 * table.clean.f1;
    let cells: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            let setting = r.setting.map_or(String::new(), |s| format!(" {s}"));
            format!("{}{setting}={:.2}", r.transform, r.scores.map_or(f64::NAN, |s| s.f1))
        })
        .collect();
    gate.record(
        "A11",
        pass,
        format!(
            "robustness sweep: {} rows complete {complete}; quality 90 F1 {q90:.3} <= {:.3} (0.5 x clean); {}",
            table.rows.len(),
            0.5 * table.clean.f1,
            cells.join(" ")
        ),
    );
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_facepoison")).args(args).output().unwrap()
}

fn a12(gate: &mut Gate, fx: &Fixture) {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scene.png");
    write_png(&input, &fx.held_out[0].0).unwrap();
    let first = dir.path().join("first.png");
    let replay = dir.path().join("replay.png");
    let path = |p: &Path| p.to_str().unwrap().to_string();
    let weights = path(&fx.weights);
    let out = run_cli(&[
        "protect-image",
        "--in",
        &path(&input),
        "--out",
        &path(&first),
        "--method",
        "ada-dim++",
        "--detector",
        &weights,
        "--seed",
        "7",
    ]);
    let manifest = dir.path().join("first.manifest.json");
    let again = run_cli(&["protect-image", "--config", &path(&manifest), "--out", &path(&replay)]);
    let identical = out.status.success()
        && again.status.success()
        && std::fs::read(&first).ok().is_some_and(|a| std::fs::read(&replay).ok().is_some_and(|b| a == b));
    gate.record(
        "A12",
        identical,
        format!(
            "determinism: manifest replay exit {:?}/{:?}, protected PNG byte-identical {identical}",
            out.status.code(),
            again.status.code()
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let only = std::env::var("FACEPOISON_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect::<Vec<_>>());
    let mut gate = Gate { only, failed: Vec::new() };
    let fx = fixture();
    if gate.wants("A1") {
        a1(&mut gate, &fx);
    }
    let protected = if gate.wants("A2") || gate.wants("A11") { a2(&mut gate, &fx) } else { None };
    if gate.wants("A3") {
        a3(&mut gate, &fx);
    }
    if gate.wants("A4") {
        a4(&mut gate, &fx);
    }
    if gate.wants("A5") {
        a5(&mut gate, &fx);
    }
    if gate.wants("A6") {
        a6(&mut gate, &fx);
    }
    if gate.wants("A7") {
        a7(&mut gate);
    }
    if gate.wants("A8") {
        a8(&mut gate, &fx);
    }
    if gate.wants("A9") {
        a9(&mut gate);
    }
    if gate.wants("A10") {
        a10(&mut gate);
    }
    if let (true, Some(p)) = (gate.wants("A11"), protected.as_ref()) {
        a11(&mut gate, &fx, p);
    }
    if gate.wants("A12") {
        a12(&mut gate, &fx);
    }
    assert!(gate.failed.is_empty(), "failed criteria: {:?}", gate.failed);
}

#[test]
fn bidirectional_propagation_keeps_most_of_the_damage() {
    let fx = fixture();
    let video = translating_fixture(&fx);
    let schedule = AnchorSchedule::default();
    let mut clean = Counts::default();
    for (v, frame) in video.frames.iter().enumerate() {
        if v % schedule.eval_interval == 0 {
            let det = fx.model.detect(frame).unwrap();
            clean.add(&match_detections(&det, &det.to_ground_truth(), schedule.iou_threshold));
        }
    }
    let clean_f1 = clean.scores().f1;
    let attack = attack_config(Method::AdaBim, 0);
    let (_, report) =
        propagate(&video, &fx.model, &attack, &schedule, PropagationMode::Bidirectional, &HornSchunck::default())
            .map_err(|e| e.to_string())
            .unwrap();
    let anchors = video.frames.len().div_ceil(schedule.anchor_period);
    assert_eq!(report.attack_invocations, anchors);
    assert!(report.video_f1 <= 0.5 * clean_f1, "bidirectional F1 {} vs clean {}", report.video_f1, clean_f1);
}

#[test]
fn guided_objective_descends_on_nearly_every_image() {
    let fx = fixture();
    let n = 40;
    let descended = fx.held_out[..n]
        .iter()
        .enumerate()
        .filter(|(i, (img, _))| {
            let (_, report) = run_attack(&fx.model, img, &attack_config(Method::AdaBim, *i)).unwrap();
            report.objective_trace.last().is_some_and(|&v| v <= report.initial_objective)
        })
        .count();
    assert!(descended * 100 >= 95 * n, "{descended}/{n} images descended");
}
