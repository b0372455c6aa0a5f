use eodf::corpus::{self, SceneParams};
use eodf::detector::{self, ObjectClass, OracleParams};
use eodf::saliency;
use eodf::sim::{self, EvalSettings};

#[test]
fn discard_ratio_tracks_target_on_street_frames() {
    let params = SceneParams::default();
    for i in 0..20 {
        let scene = corpus::generate_scene(&params, 42, i).unwrap();
        for target in [0.05, 0.1, 0.2, 0.3] {
            let m = saliency::srvs_compress(&scene.image, target, 64).unwrap();
            assert!(
                (m.discard_ratio - target).abs() <= 0.02,
                "frame {i} target {target}: achieved {}",
                m.discard_ratio
            );
        }
    }
}

#[test]
fn textureless_sky_goes_first() {
    let scene = corpus::generate_scene(&SceneParams::default(), 42, 3).unwrap();
    let m = saliency::srvs_compress(&scene.image, 0.2, 64).unwrap();
    let w = m.mask.width();
    let kept_rows = |rows: std::ops::Range<usize>| {
        let n = rows.len() * w;
        rows.flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| m.mask.get(x, y)).count() as f64 / n as f64
    };
    let sky = kept_rows(20..80);
    let street = kept_rows(130..220);
    assert!(sky < street, "sky kept {sky}, street kept {street}");
}

#[test]
fn label_files_parse_back() {
    let scene = corpus::generate_scene(&SceneParams::default(), 1, 0).unwrap();
    let truths = detector::parse_kitti_labels(&scene.label_text()).unwrap();
    assert_eq!(truths.len(), scene.objects.len());
    let masked = saliency::srvs_compress(&scene.image, 0.0, 64).unwrap();
    let dets = detector::oracle_detect(&masked, &truths, &OracleParams::default());
    let evaluated = truths.iter().filter(|t| ObjectClass::EVALUATED.contains(&t.class)).count();
    assert_eq!(dets.len(), evaluated);
}

#[test]
fn accuracy_sweep_shape() {
    let dir = tempfile::tempdir().unwrap();
    corpus::write_corpus(dir.path(), 12, 9, &SceneParams::default()).unwrap();
    // A frame without labels is skipped and reported.
    std::fs::copy(dir.path().join("images/000000.ppm"), dir.path().join("images/000999.ppm")).unwrap();
    let ratios = [0.0, 0.05, 0.1, 0.2, 0.3, 0.5];
    let report = sim::evaluate_accuracy(dir.path(), &ratios, &EvalSettings::default()).unwrap();
    assert_eq!(report.skipped_frames, vec!["000999".to_string()]);
    assert_eq!(report.frames, 12);
    assert_eq!(report.map_at(0.0), Some(1.0));
    let maps: Vec<f64> = ratios.iter().map(|&r| report.map_at(r).unwrap()).collect();
    assert!(maps.windows(2).all(|w| w[1] <= w[0]), "{maps:?}");
    let csv = report.to_csv();
    assert!(csv.starts_with("ratio,class,ap,num_truths,num_dets\n"));
    assert!(csv.contains("\n0,mAP,1,"));
}
