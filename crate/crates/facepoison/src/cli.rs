//! Subcommand parsing and execution.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use facepoison_core::attack::{run_attack, Method};
use facepoison_core::eval::{robustness_suite, ssim, RobustnessTable};
use facepoison_core::synth::toy::{train_toy_detector, TrainingReport};
use facepoison_core::video::{propagate, AnchorSchedule, PropagationMode, PropagationReport, VideoSequence};
use facepoison_core::{Detector, GroundTruth, Image, Perturbation};
use serde::Serialize;
use serde_json::json;

use crate::annotations::{evaluate_files, AnnotatedImage, AnnotationFile};
use crate::codec::JpegCodec;
use crate::config::{DetectorSelection, RunConfig};
use crate::error::{AppError, AppResult};
use crate::io::{list_pngs, read_image, read_json, sibling, write_json, write_png};
use crate::manifest::Manifest;
use crate::weights::{load_weights, save_weights};

#[derive(Debug, Parser)]
#[command(name = "facepoison", version, about = "Protect face images and videos from face-detector based extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the built-in toy detector on synthetic scenes.
    TrainToy(TrainToyArgs),
    /// Add a bounded adversarial perturbation to one image.
    ProtectImage(ProtectImageArgs),
    /// Protect a directory of numbered frames.
    ProtectVideo(ProtectVideoArgs),
    /// Score predictions against ground truth, and/or SSIM of two images.
    Eval(EvalArgs),
    /// Re-run detection on protected images after common post-processing.
    Robustness(RobustnessArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Run configuration or manifest to start from; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; every random stream is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct AttackArgs {
    /// Detector weights file, or `external:<id>`.
    #[arg(long)]
    pub detector: Option<String>,
    /// ada-fgsm, ada-bim, ada-mim, ada-nim, ada-dim or ada-dim++.
    #[arg(long)]
    pub method: Option<Method>,
    /// L-infinity budget in 0..255 intensity units.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Weights file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProtectImageArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtectVideoArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub attack: AttackArgs,
    /// Directory of PNG frames, ordered by file name.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// full, fixed, forward or bidirectional.
    #[arg(long)]
    pub mode: Option<PropagationMode>,
    #[arg(long)]
    pub anchor_period: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub fps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Predicted boxes (annotation JSON).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth boxes (annotation JSON).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Clean image for SSIM.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Protected image for SSIM.
    #[arg(long)]
    pub protected: Option<PathBuf>,
    /// JSON report to write.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub common: Common,
    /// Detector weights file, or `external:<id>`.
    #[arg(long)]
    pub detector: Option<String>,
    /// Directory of protected PNGs.
    #[arg(long)]
    pub protected: Option<PathBuf>,
    /// Directory of the matching clean images (same file names).
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Ground truth keyed by file name; clean-image detections otherwise.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// CSV table to write; a JSON copy is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Detector adapters an embedding program makes available as `external:<id>`.
#[derive(Default)]
pub struct Adapters {
    pub detectors: BTreeMap<String, Box<dyn Detector>>,
}

enum Loaded<'a> {
    Owned(Box<dyn Detector>),
    Borrowed(&'a dyn Detector),
}

impl Loaded<'_> {
    fn get(&self) -> &dyn Detector {
        match self {
            Loaded::Owned(d) => d.as_ref(),
            Loaded::Borrowed(d) => *d,
        }
    }
}

fn parse_detector(spec: &str) -> DetectorSelection {
    match spec.strip_prefix("external:") {
        Some(id) => DetectorSelection::External { id: id.to_string() },
        None => DetectorSelection::Toy { weights: PathBuf::from(spec) },
    }
}

fn load_detector<'a>(cfg: &RunConfig, adapters: &'a Adapters) -> AppResult<Loaded<'a>> {
    match &cfg.detector {
        None => Err(AppError::Usage(format!("{}: --detector is required", cfg.command))),
        Some(DetectorSelection::Toy { weights }) => Ok(Loaded::Owned(Box::new(load_weights(weights)?))),
        Some(DetectorSelection::External { id }) => adapters
            .detectors
            .get(id)
            .map(|d| Loaded::Borrowed(d.as_ref()))
            .ok_or_else(|| AppError::Usage(format!("no detector adapter is registered as '{id}'"))),
    }
}

fn base_config(common: &Common, command: &str) -> AppResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            if !cfg.command.is_empty() && cfg.command != command {
                return Err(AppError::ConfigFile {
                    path: path.clone(),
                    message: format!("config is for '{}', not '{command}'", cfg.command),
                });
            }
            cfg
        }
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_attack_args(cfg: &mut RunConfig, args: &AttackArgs) {
    if let Some(d) = &args.detector {
        cfg.detector = Some(parse_detector(d));
    }
    if let Some(m) = args.method {
        cfg.attack.method = m;
    }
    if let Some(e) = args.epsilon {
        cfg.attack.epsilon = e;
    }
    if let Some(t) = args.iterations {
        cfg.attack.iterations = t;
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Parses `args` and runs the command; the result carries the exit status.
pub fn run<I, T>(args: I, adapters: &Adapters) -> Result<(), RunError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => return Err(RunError::Clap(e)),
    };
    execute(cli.command, adapters).map_err(RunError::App)
}

#[derive(Debug)]
pub enum RunError {
    Clap(clap::Error),
    App(AppError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Clap(e) if !e.use_stderr() => 0,
            RunError::Clap(_) => crate::error::EXIT_USAGE,
            RunError::App(e) => e.exit_code(),
        }
    }

    /// One-line message for stderr; help and version text go to stdout whole.
    pub fn report(&self) {
        match self {
            RunError::Clap(e) if !e.use_stderr() => print!("{e}"),
            RunError::Clap(e) => {
                let text = e.to_string();
                eprintln!("{}", text.lines().next().unwrap_or("usage error"));
            }
            RunError::App(e) => eprintln!("error: {e}"),
        }
    }
}

pub fn execute(command: Command, adapters: &Adapters) -> AppResult<()> {
    match command {
        Command::TrainToy(a) => train_toy(a),
        Command::ProtectImage(a) => protect_image(a, adapters),
        Command::ProtectVideo(a) => protect_video(a, adapters),
        Command::Eval(a) => eval(a),
        Command::Robustness(a) => robustness(a, adapters),
    }
}

#[derive(Serialize)]
struct TrainingOutput<'a> {
    #[serde(flatten)]
    report: &'a TrainingReport,
    runtime_secs: f64,
}

fn train_toy(a: TrainToyArgs) -> AppResult<()> {
    let mut cfg = base_config(&a.common, "train-toy")?;
    set_opt(&mut cfg.output, a.out);
    set_opt(&mut cfg.training.report, a.report);
    set(&mut cfg.training.spec.epochs, a.epochs);
    set(&mut cfg.training.train_count, a.train);
    set(&mut cfg.training.val_count, a.val);
    cfg.resolve_seeds();
    let out = cfg.require_output()?.to_path_buf();
    let report_path = cfg.training.report.clone().unwrap_or_else(|| sibling(&out, ".report.json"));
    let started = Instant::now();
    let (model, report) = train_toy_detector(&cfg.training.spec, cfg.training.train_count, cfg.training.val_count)?;
    let runtime_secs = started.elapsed().as_secs_f64();
    save_weights(&out, &model, Some(&report))?;
    write_json(&report_path, &TrainingOutput { report: &report, runtime_secs })?;
    println!("clean_f1 = {:.4}", report.clean_f1);
    println!("epochs = {}", report.epochs);
    println!("runtime_secs = {runtime_secs:.1}");
    let summary = json!({ "clean_f1": report.clean_f1, "epochs": report.epochs, "seed": report.seed });
    Manifest::new(&cfg, vec![out.clone(), report_path], summary).write(&sibling(&out, ".manifest.json"))
}

#[derive(Serialize)]
struct ImageSidecar {
    method: Method,
    epsilon: f64,
    iterations: usize,
    seed: u64,
    initial_objective: f64,
    objective_trace: Vec<f64>,
    gradient_evaluations: usize,
    clean_path: PathBuf,
    output_path: PathBuf,
    linf: f64,
    ssim: Option<f64>,
    score_threshold: f64,
    clean_detections: usize,
    protected_detections: usize,
}

fn protect_image(a: ProtectImageArgs, adapters: &Adapters) -> AppResult<()> {
    let mut cfg = base_config(&a.common, "protect-image")?;
    apply_attack_args(&mut cfg, &a.attack);
    set_opt(&mut cfg.input, a.input);
    set_opt(&mut cfg.output, a.out);
    cfg.resolve_seeds();
    let input = cfg.require_input()?.to_path_buf();
    let out = cfg.require_output()?.to_path_buf();
    if out.extension().and_then(|e| e.to_str()).map_or(true, |e| !e.eq_ignore_ascii_case("png")) {
        return Err(AppError::Usage(format!("{}: protected images are written as .png only", out.display())));
    }
    let loaded = load_detector(&cfg, adapters)?;
    let model = loaded.get();
    let clean = read_image(&input)?;
    let (protected, report) = run_attack(model, &clean, &cfg.attack)?;
    write_png(&out, &protected)?;
    let sidecar = ImageSidecar {
        method: report.method,
        epsilon: report.epsilon,
        iterations: report.iterations,
        seed: report.seed,
        initial_objective: report.initial_objective,
        objective_trace: report.objective_trace.clone(),
        gradient_evaluations: report.gradient_evaluations,
        clean_path: input.clone(),
        output_path: out.clone(),
        linf: Perturbation::between(&protected, &clean)?.linf(),
        ssim: ssim(&clean, &protected).ok(),
        score_threshold: model.threshold(),
        clean_detections: model.detect(&clean)?.len(),
        protected_detections: model.detect(&protected)?.len(),
    };
    let sidecar_path = sibling(&out, ".json");
    write_json(&sidecar_path, &sidecar)?;
    println!("{} -> {} ({}, eps {}, linf {})", input.display(), out.display(), sidecar.method, sidecar.epsilon, sidecar.linf);
    let summary = serde_json::to_value(&sidecar).map_err(|e| AppError::format(&sidecar_path, e))?;
    Manifest::new(&cfg, vec![out.clone(), sidecar_path], summary).write(&sibling(&out, ".manifest.json"))
}

fn frame_file(index: usize) -> String {
    format!("{index:06}.png")
}

fn write_frame_report(path: &Path, report: &PropagationReport) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::format(path, e))?;
    w.write_record(["frame", "mode", "anchor", "f1_contrib", "linf"]).map_err(|e| AppError::format(path, e))?;
    for f in &report.frames {
        let f1 = if f.evaluated { format!("{}", f.f1) } else { String::new() };
        w.write_record([f.frame.to_string(), f.mode.to_string(), f.anchor.to_string(), f1, f.linf.to_string()])
            .map_err(|e| AppError::format(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn protect_video(a: ProtectVideoArgs, adapters: &Adapters) -> AppResult<()> {
    let mut cfg = base_config(&a.common, "protect-video")?;
    apply_attack_args(&mut cfg, &a.attack);
    set_opt(&mut cfg.input, a.input);
    set_opt(&mut cfg.output, a.out);
    set(&mut cfg.mode, a.mode);
    set(&mut cfg.schedule.anchor_period, a.anchor_period);
    set(&mut cfg.schedule.eval_interval, a.eval_interval);
    set(&mut cfg.fps, a.fps);
    cfg.resolve_seeds();
    let input = cfg.require_input()?.to_path_buf();
    let out = cfg.require_output()?.to_path_buf();
    let loaded = load_detector(&cfg, adapters)?;
    let frames = list_pngs(&input)?
        .iter()
        .map(|p| read_image(p))
        .collect::<AppResult<Vec<Image>>>()?;
    let video = VideoSequence::new(frames, cfg.fps)?;
    std::fs::create_dir_all(&out).map_err(|e| AppError::io(&out, e))?;
    let (protected, report, failure) = match propagate(&video, loaded.get(), &cfg.attack, &cfg.schedule, cfg.mode, &cfg.flow) {
        Ok((v, r)) => (v.frames, r, None),
        Err(f) => {
            let f = *f;
            (f.frames, f.report, Some(format!("frame {}: {}", f.frame, f.source)))
        }
    };
    let mut outputs = Vec::with_capacity(protected.len() + 1);
    for (i, frame) in protected.iter().enumerate() {
        let path = out.join(frame_file(i));
        write_png(&path, frame)?;
        outputs.push(path);
    }
    let csv_path = out.join("report.csv");
    write_frame_report(&csv_path, &report)?;
    outputs.push(csv_path);
    let summary = json!({
        "frames": video.len(),
        "completed_frames": protected.len(),
        "mode": report.mode,
        "video_f1": report.video_f1,
        "attack_invocations": report.attack_invocations,
        "flow_computations": report.flow_computations,
        "score_threshold": loaded.get().threshold(),
        "error": failure,
    });
    Manifest::new(&cfg, outputs, summary).write(&out.join("manifest.json"))?;
    if let Some(msg) = failure {
        return Err(AppError::Propagation(msg));
    }
    println!(
        "{} frames, mode {}, {} attacks, video f1 = {:.4}",
        protected.len(),
        report.mode,
        report.attack_invocations,
        report.video_f1
    );
    Ok(())
}

fn eval(a: EvalArgs) -> AppResult<()> {
    let mut cfg = base_config(&a.common, "eval")?;
    set_opt(&mut cfg.evaluation.predictions, a.pred);
    set_opt(&mut cfg.evaluation.ground_truth, a.gt);
    set(&mut cfg.evaluation.iou_threshold, a.iou);
    set(&mut cfg.evaluation.score_threshold, a.score_threshold);
    set_opt(&mut cfg.evaluation.clean, a.clean);
    set_opt(&mut cfg.input, a.protected);
    set_opt(&mut cfg.evaluation.report, a.report);
    cfg.resolve_seeds();
    let ev = cfg.evaluation.clone();
    if !(0.0..=1.0).contains(&ev.iou_threshold) {
        return Err(AppError::Usage("--iou must be in [0, 1]".into()));
    }
    let mut report = serde_json::Map::new();
    let mut text = String::new();
    match (&ev.predictions, &ev.ground_truth) {
        (Some(p), Some(g)) => {
            let (counts, per_image) =
                evaluate_files(&AnnotationFile::load(p)?, &AnnotationFile::load(g)?, ev.iou_threshold, ev.score_threshold);
            let s = counts.scores();
            let _ = writeln!(text, "images = {}", per_image.len());
            let _ = writeln!(
                text,
                "tp = {}\nfp = {}\nfn = {}",
                counts.true_positives, counts.false_positives, counts.false_negatives
            );
            let _ = writeln!(text, "precision = {}\nrecall = {}\nf1 = {}", s.precision, s.recall, s.f1);
            let _ = writeln!(text, "iou_threshold = {}\nscore_threshold = {}", ev.iou_threshold, ev.score_threshold);
            report.insert("counts".into(), json!(counts));
            report.insert("scores".into(), json!(s));
            report.insert("per_image".into(), json!(per_image));
            report.insert("iou_threshold".into(), json!(ev.iou_threshold));
            report.insert("score_threshold".into(), json!(ev.score_threshold));
        }
        (None, None) => {}
        _ => return Err(AppError::Usage("eval needs both --pred and --gt".into())),
    }
    match (&ev.clean, &cfg.input) {
        (Some(c), Some(p)) => {
            let value = ssim(&read_image(c)?, &read_image(p)?)?;
            let _ = writeln!(text, "ssim = {value}");
            report.insert("ssim".into(), json!(value));
        }
        (None, None) => {}
        _ => return Err(AppError::Usage("ssim needs both --clean and --protected".into())),
    }
    if report.is_empty() {
        return Err(AppError::Usage("eval needs --pred/--gt and/or --clean/--protected".into()));
    }
    print!("{text}");
    let mut outputs = Vec::new();
    if let Some(path) = &ev.report {
        write_json(path, &report)?;
        outputs.push(path.clone());
        Manifest::new(&cfg, outputs, serde_json::Value::Object(report)).write(&sibling(path, ".manifest.json"))?;
    }
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_table(path: &Path, table: &RobustnessTable) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::format(path, e))?;
    w.write_record(["transform", "setting", "seed", "f1", "precision", "recall", "tp", "fp", "fn", "score_threshold", "error"])
        .map_err(|e| AppError::format(path, e))?;
    for r in &table.rows {
        let (f1, p, rc) = r
            .scores
            .map(|s| (s.f1.to_string(), s.precision.to_string(), s.recall.to_string()))
            .unwrap_or_default();
        w.write_record([
            r.transform.clone(),
            r.setting.map(|s| s.to_string()).unwrap_or_default(),
            r.seed.to_string(),
            f1,
            p,
            rc,
            r.counts.true_positives.to_string(),
            r.counts.false_positives.to_string(),
            r.counts.false_negatives.to_string(),
            table.score_threshold.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| AppError::format(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn robustness(a: RobustnessArgs, adapters: &Adapters) -> AppResult<()> {
    let mut cfg = base_config(&a.common, "robustness")?;
    if let Some(d) = &a.detector {
        cfg.detector = Some(parse_detector(d));
    }
    set_opt(&mut cfg.input, a.protected);
    set_opt(&mut cfg.evaluation.clean, a.clean);
    set_opt(&mut cfg.evaluation.ground_truth, a.gt);
    set_opt(&mut cfg.output, a.out);
    cfg.resolve_seeds();
    let protected_dir = cfg.require_input()?.to_path_buf();
    let out = cfg.require_output()?.to_path_buf();
    let clean_dir = cfg
        .evaluation
        .clean
        .clone()
        .ok_or_else(|| AppError::Usage("robustness needs --clean".into()))?;
    let loaded = load_detector(&cfg, adapters)?;
    let model = loaded.get();
    let protected_paths = list_pngs(&protected_dir)?;
    let names: Vec<String> = protected_paths.iter().map(|p| file_name(p)).collect();
    let protected = protected_paths.iter().map(|p| read_image(p)).collect::<AppResult<Vec<_>>>()?;
    let clean = names
        .iter()
        .map(|n| read_image(&clean_dir.join(n)))
        .collect::<AppResult<Vec<_>>>()?;
    let truth: Vec<GroundTruth> = match &cfg.evaluation.ground_truth {
        Some(path) => {
            let file = AnnotationFile::load(path)?;
            names
                .iter()
                .map(|n| file.ground_truth(n).ok_or_else(|| AppError::format(path, format!("no entry for {n}"))))
                .collect::<AppResult<_>>()?
        }
        None => clean.iter().map(|c| model.detect(c).map(|d| d.to_ground_truth())).collect::<Result<_, _>>()?,
    };
    let table = robustness_suite(&protected, &clean, &truth, model, &cfg.robustness, &JpegCodec)?;
    write_table(&out, &table)?;
    let json_path = out.with_extension("json");
    write_json(&json_path, &table)?;
    println!("clean f1 = {:.4} (score threshold {})", table.clean.f1, table.score_threshold);
    for r in &table.rows {
        let setting = r.setting.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        match (&r.scores, &r.error) {
            (Some(s), _) => println!("{:<10} {:>5}  f1 = {:.4}", r.transform, setting, s.f1),
            (None, Some(e)) => println!("{:<10} {:>5}  failed: {e}", r.transform, setting),
            (None, None) => println!("{:<10} {:>5}  -", r.transform, setting),
        }
    }
    let summary = json!({ "clean_f1": table.clean.f1, "baseline_f1": table.baseline().scores.map(|s| s.f1) });
    Manifest::new(&cfg, vec![out.clone(), json_path], summary).write(&sibling(&out, ".manifest.json"))
}

/// Writes detections of `model` on every image as an annotation file.
pub fn detections_file(model: &dyn Detector, images: &[(String, Image)]) -> AppResult<AnnotationFile> {
    let mut file = AnnotationFile::default();
    for (path, img) in images {
        file.images.push(AnnotatedImage::from_detections(path.clone(), &model.detect(img)?));
    }
    Ok(file)
}

/// Convenience for callers holding an anchor schedule from a config file.
pub fn load_schedule(path: &Path) -> AppResult<AnchorSchedule> {
    read_json(path)
}
