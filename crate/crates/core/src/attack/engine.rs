use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::distr::Uniform;
use rand::Rng as _;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::config::{AttackConfig, Method};
use super::objective::{feature_objective, GuidedObjective};
use super::project::project_linf;
use super::transforms::{spectrum_transform_with, Dct2, DimTransform};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::guidance::{importance_maps, ImportanceMap};
use crate::image::{quantize_within, FloatImage, Image, Perturbation};
use crate::rng::{self, Rng};

/// Optimizer state after an update.
#[derive(Debug)]
pub struct AttackState<'a> {
    /// Number of completed updates.
    pub iteration: usize,
    pub adversarial: &'a FloatImage,
    pub accumulated: &'a FloatImage,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AttackReport {
    pub method: Method,
    pub epsilon: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Objective at the clean image.
    pub initial_objective: f64,
    /// Objective after every update.
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub gradient_evaluations: usize,
    pub wall_time_secs: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub perturbation: Option<Perturbation>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Session<'a> {
    model: &'a dyn Detector,
    objective: GuidedObjective<'a>,
    evaluations: usize,
}

impl Session<'_> {
    fn grad(&mut self, at: &FloatImage) -> Result<FloatImage> {
        self.evaluations += 1;
        Ok(self.model.gradient(at, &self.objective)?.input)
    }

    fn value(&self, at: &FloatImage) -> Result<f64> {
        let features = self.model.extract_features(at)?;
        feature_objective(&features, self.objective.maps, self.objective.weights)
    }
}

fn add_scaled(acc: &mut FloatImage, g: &FloatImage, s: f64) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += s * b;
    }
}

/// Gradient of the method-specific surrogate at the current iterate.
fn method_gradient(
    session: &mut Session<'_>,
    config: &AttackConfig,
    adversarial: &FloatImage,
    accumulated: &FloatImage,
    plan: Option<&Dct2>,
    r: &mut Rng,
) -> Result<FloatImage> {
    let (w, h) = (adversarial.width(), adversarial.height());
    match config.method {
        Method::AdaFgsm | Method::AdaBim | Method::AdaMim => session.grad(adversarial),
        Method::AdaNim => {
            // look ahead along the descent direction
            let mut ahead = adversarial.clone();
            add_scaled(&mut ahead, accumulated, -config.step_size() * config.momentum);
            session.grad(&ahead)
        }
        Method::AdaDim => {
            let t = DimTransform::draw(&config.dim, w, h, r);
            Ok(t.adjoint(&session.grad(&t.apply(adversarial))?))
        }
        Method::AdaDimPlusPlus => {
            let plan = plan.expect("spectrum plan is built for ada-dim++");
            let sp = &config.spectrum;
            let mut total = FloatImage::zeros(w, h, adversarial.channels());
            let mut count = 0usize;
            let neighbour = (config.epsilon > 0.0)
                .then(|| Uniform::new_inclusive(-config.epsilon, config.epsilon).expect("finite epsilon"));
            for _ in 0..sp.samples {
                let spectral = spectrum_transform_with(plan, adversarial, sp.sigma, sp.rho, r);
                for k in 0..=sp.neighbors {
                    let mut point = spectral.clone();
                    if let (true, Some(u)) = (k > 0, neighbour.as_ref()) {
                        point.data_mut().iter_mut().for_each(|v| *v += r.sample(u));
                    }
                    let t = DimTransform::draw(&config.dim, w, h, r);
                    let g = t.adjoint(&session.grad(&t.apply(&point))?);
                    add_scaled(&mut total, &g, 1.0);
                    count += 1;
                }
            }
            let inv = 1.0 / count as f64;
            total.data_mut().iter_mut().for_each(|v| *v *= inv);
            Ok(total)
        }
    }
}

/// Computes importance maps for `image` and runs the configured attack.
pub fn run_attack(model: &dyn Detector, image: &Image, config: &AttackConfig) -> Result<(Image, AttackReport)> {
    run_attack_observed(model, image, config, &mut |_| {})
}

pub fn run_attack_observed(
    model: &dyn Detector,
    image: &Image,
    config: &AttackConfig,
    observer: &mut dyn FnMut(&AttackState<'_>),
) -> Result<(Image, AttackReport)> {
    config.validate(model.tap_count())?;
    image.ensure_rgb()?;
    let maps = importance_maps(model, image, &config.guidance)?;
    run_attack_with_maps(model, image, &maps, config, observer)
}

/// Runs the attack loop with precomputed importance maps.
///
/// Every iterate satisfies `|x_adv - x|_inf <= eps` and lies in `[0, 255]`;
/// the returned image is quantized without leaving that set.
pub fn run_attack_with_maps(
    model: &dyn Detector,
    image: &Image,
    maps: &ImportanceMap,
    config: &AttackConfig,
    observer: &mut dyn FnMut(&AttackState<'_>),
) -> Result<(Image, AttackReport)> {
    config.validate(model.tap_count())?;
    image.ensure_rgb()?;
    #[cfg(feature = "std")]
    let started = std::time::Instant::now();

    let clean = image.to_float();
    let mut session = Session {
        model,
        objective: GuidedObjective { maps, weights: &config.layer_weights },
        evaluations: 0,
    };
    let plan = (config.method == Method::AdaDimPlusPlus).then(|| Dct2::new(image.width(), image.height()));
    let mut r = rng::rng(rng::substream(config.seed, "attack"));
    let eps = config.epsilon;
    let alpha = config.step_size();
    let iterations = config.effective_iterations();

    let initial_objective = session.value(&clean)?;
    let mut adversarial = clean.clone();
    let mut accumulated = FloatImage::zeros(clean.width(), clean.height(), clean.channels());
    let mut trace = Vec::with_capacity(iterations);

    for t in 0..iterations {
        let fail = |e: Error, trace: &Vec<f64>| Error::Attack { iteration: t, trace: trace.clone(), source: Box::new(e) };
        let grad = method_gradient(&mut session, config, &adversarial, &accumulated, plan.as_ref(), &mut r)
            .map_err(|e| fail(e, &trace))?;
        if config.method.uses_momentum() {
            let l1: f64 = grad.data().iter().map(|v| libm::fabs(*v)).sum();
            accumulated.data_mut().iter_mut().for_each(|v| *v *= config.momentum);
            if l1 > 0.0 {
                add_scaled(&mut accumulated, &grad, 1.0 / l1);
            }
        } else {
            accumulated = grad;
        }
        let mut candidate = adversarial.clone();
        for (v, &g) in candidate.data_mut().iter_mut().zip(accumulated.data()) {
            *v -= alpha * sign(g);
        }
        adversarial = project_linf(&candidate, image, eps);
        let value = session.value(&adversarial).map_err(|e| fail(e, &trace))?;
        trace.push(value);
        observer(&AttackState { iteration: t + 1, adversarial: &adversarial, accumulated: &accumulated, objective: value });
    }

    let mut out = image.clone();
    for ((o, &x), &v) in out.data_mut().iter_mut().zip(image.data()).zip(adversarial.data()) {
        *o = quantize_within(v, x, eps);
    }
    let perturbation = Perturbation::between(&out, image)?;
    #[cfg(feature = "std")]
    let wall_time_secs = Some(started.elapsed().as_secs_f64());
    #[cfg(not(feature = "std"))]
    let wall_time_secs = None;
    let report = AttackReport {
        method: config.method,
        epsilon: eps,
        iterations: config.iterations,
        seed: config.seed,
        initial_objective,
        iterations_used: trace.len(),
        objective_trace: trace,
        gradient_evaluations: session.evaluations,
        wall_time_secs,
        perturbation: Some(perturbation),
    };
    Ok((out, report))
}
