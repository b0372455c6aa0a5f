mod oracles;

use eodf::detector::{self, BoundingBox, FrameDetection, FrameTruth};
use rand::SeedableRng;

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a == b
}

#[test]
fn matches_brute_force_on_random_scenarios() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
    for case in 0..200 {
        let (dets, truths) = oracles::random_scenario(&mut rng, 50);
        for thr in [0.5, 0.7] {
            let fast = detector::average_precision(&dets, &truths, thr);
            let slow = oracles::ap_reference(&dets, &truths, thr);
            assert!(same(fast, slow), "case {case} iou {thr}: {fast} vs {slow}");
        }
    }
}

fn fd(frame: &str, confidence: f64, l: f64, r: f64) -> FrameDetection {
    FrameDetection {
        frame: frame.into(),
        confidence,
        bbox: BoundingBox::new(l, 0.0, r, 10.0).unwrap(),
    }
}

fn ft(frame: &str, l: f64, r: f64) -> FrameTruth {
    FrameTruth {
        frame: frame.into(),
        bbox: BoundingBox::new(l, 0.0, r, 10.0).unwrap(),
    }
}

#[test]
fn hand_worked_curve() {
    // Ranked: TP, FP, TP over 3 truths -> points (1/3, 1), (1/3, 1/2),
    // (2/3, 2/3); envelope 1, 2/3, 2/3; AP = 1/3 + 1/3 * 2/3 = 5/9.
    let truths = vec![ft("a", 0.0, 10.0), ft("a", 20.0, 30.0), ft("b", 0.0, 10.0)];
    let dets = vec![fd("a", 0.9, 0.0, 10.0), fd("a", 0.8, 50.0, 60.0), fd("b", 0.7, 0.0, 10.0)];
    let ap = detector::average_precision(&dets, &truths, 0.5);
    assert!((ap - 5.0 / 9.0).abs() < 1e-12, "{ap}");
    assert_eq!(ap, oracles::ap_reference(&dets, &truths, 0.5));
}

#[test]
fn duplicate_detection_is_a_false_positive() {
    let truths = vec![ft("a", 0.0, 10.0)];
    let dets = vec![fd("a", 0.9, 0.0, 10.0), fd("a", 0.8, 0.0, 10.0)];
    assert_eq!(detector::average_precision(&dets, &truths, 0.5), 1.0);
    let dets = vec![fd("a", 0.9, 50.0, 60.0), fd("a", 0.8, 0.0, 10.0)];
    assert_eq!(detector::average_precision(&dets, &truths, 0.5), 0.5);
}

#[test]
fn no_truths_is_undefined_and_no_dets_is_zero() {
    assert!(detector::average_precision(&[fd("a", 0.5, 0.0, 1.0)], &[], 0.5).is_nan());
    assert_eq!(detector::average_precision(&[], &[ft("a", 0.0, 10.0)], 0.5), 0.0);
}
