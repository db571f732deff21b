use facepoison_core::attack::{project_linf, run_attack, run_attack_observed, AttackConfig, GuidedObjective, Method};
use facepoison_core::guidance::importance_maps;
use facepoison_core::image::quantize_within;
use facepoison_core::synth::{generate_scene, SceneConfig, ToyDetector, ToyDetectorSpec};
use facepoison_core::{Detector, Image};
use proptest::prelude::*;

fn small() -> (ToyDetector, Image) {
    let spec = ToyDetectorSpec::default();
    let scene = SceneConfig { image_size: 48, ..spec.scene.clone() };
    let (img, _) = generate_scene(&scene, 3).unwrap();
    (ToyDetector::new(spec), img)
}

fn quick(method: Method) -> AttackConfig {
    let mut cfg = AttackConfig::with_method(method);
    cfg.guidance.samples = 3;
    cfg.spectrum.samples = 2;
    cfg.spectrum.neighbors = 1;
    cfg
}

#[test]
fn every_method_runs_within_budget() {
    let (model, img) = small();
    for method in Method::ALL {
        let (adv, report) = run_attack(&model, &img, &quick(method)).unwrap();
        assert_eq!(report.method, method);
        assert!(report.perturbation.unwrap().linf() <= 8.0);
        assert!(adv.same_shape(&img));
    }
}

#[test]
fn zero_budget_returns_the_input() {
    let (model, img) = small();
    let mut cfg = quick(Method::AdaMim);
    cfg.epsilon = 0.0;
    let (adv, _) = run_attack(&model, &img, &cfg).unwrap();
    assert_eq!(adv, img);
}

#[test]
fn single_bim_step_matches_hand_computed_update() {
    let (model, img) = small();
    let mut cfg = quick(Method::AdaBim);
    cfg.iterations = 1;
    let (adv, _) = run_attack(&model, &img, &cfg).unwrap();

    let maps = importance_maps(&model, &img, &cfg.guidance).unwrap();
    let objective = GuidedObjective { maps: &maps, weights: &cfg.layer_weights };
    let g = model.gradient(&img.to_float(), &objective).unwrap().input;
    let mut x = img.to_float();
    for (v, &d) in x.data_mut().iter_mut().zip(g.data()) {
        *v -= 8.0 * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    }
    let x = project_linf(&x, &img, 8.0);
    let expected: Vec<u8> = x.data().iter().zip(img.data()).map(|(&v, &o)| quantize_within(v, o, 8.0)).collect();
    assert_ne!(adv, img);
    assert_eq!(adv.data(), &expected[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn iterates_stay_in_the_box(
        method in prop::sample::select(Method::ALL.to_vec()),
        eps in 0.0..16.0f64,
        iterations in 1usize..4,
        seed in any::<u64>(),
    ) {
        let (model, img) = small();
        let mut cfg = quick(method);
        cfg.epsilon = eps;
        cfg.iterations = iterations;
        cfg.seed = seed;
        let mut worst = 0.0f64;
        let mut invalid = false;
        let (adv, _) = run_attack_observed(&model, &img, &cfg, &mut |s| {
            for (&v, &o) in s.adversarial.data().iter().zip(img.data()) {
                worst = worst.max((v - o as f64).abs());
                invalid |= !(0.0..=255.0).contains(&v);
            }
        }).unwrap();
        prop_assert!(worst <= eps + 1e-9);
        prop_assert!(!invalid);
        for (&a, &o) in adv.data().iter().zip(img.data()) {
            prop_assert!((a as f64 - o as f64).abs() <= eps);
        }
    }
}
