use facepoison_core::synth::{generate_scene, train_toy_detector, SceneConfig, ToyDetectorSpec};
use facepoison_core::Detector;

#[test]
fn scenes_have_valid_boxes_around_every_face() {
    let cfg = SceneConfig::default();
    for i in 0..1000 {
        let (img, gt) = generate_scene(&cfg, i).unwrap();
        assert_eq!((img.width(), img.height()), (cfg.image_size, cfg.image_size));
        assert!((cfg.faces_min..=cfg.faces_max).contains(&gt.boxes.len()), "scene {i}");
        gt.validate(cfg.image_size, cfg.image_size).unwrap();
        for b in &gt.boxes {
            let (cx, cy) = b.center();
            assert!(b.contains(cx, cy));
            assert!(b.height() >= cfg.face_scale_min * cfg.image_size as f64 - 1e-9);
        }
    }
}

fn tiny() -> ToyDetectorSpec {
    let scene = SceneConfig { image_size: 64, ..SceneConfig::default() };
    ToyDetectorSpec { channels: [4, 8, 8], head_channels: 8, epochs: 1, scene, ..ToyDetectorSpec::default() }
}

#[test]
fn untrained_detector_scores_below_a_fifth() {
    let spec = ToyDetectorSpec { epochs: 0, ..tiny() };
    let (_, report) = train_toy_detector(&spec, 8, 20).unwrap();
    assert!(report.clean_f1 < 0.2);
}

#[test]
fn training_is_reproducible_for_a_seed() {
    let (a, ra) = train_toy_detector(&tiny(), 16, 4).unwrap();
    let (b, rb) = train_toy_detector(&tiny(), 16, 4).unwrap();
    assert_eq!(a.flatten(), b.flatten());
    assert_eq!(ra, rb);
    assert_eq!(a.taps(), &[1, 2, 3]);
}
