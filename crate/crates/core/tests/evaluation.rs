mod common;

use std::sync::Arc;

use common::*;
use hurovision::bridge::{DetectionMessage, WireDetection};
use hurovision::detector::ScriptedDetector;
use hurovision::evaluation::{
    ap_table, class_hits, average_precision, evaluate_log, map_scores, match_detections, precision_recall,
    run_benchmark, BenchConfig, BenchMode, EvalConfig, GroundTruthSet, ImageEval, PredBox, PredictionLog,
};
use hurovision::scheduling::SimClock;
use hurovision::source::ImageDirSource;
use hurovision::{ClassMap, Error, Event};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn label_line_converts_to_pixels() {
    let dir = tempfile::tempdir().unwrap();
    hurovision::preprocess::Image::filled(640, 480, GRASS)
        .unwrap()
        .save(&dir.path().join("a.png"))
        .unwrap();
    std::fs::write(dir.path().join("a.txt"), "0 0.5 0.5 0.2 0.3\n").unwrap();
    std::fs::write(dir.path().join("classes.txt"), "ball\nbasket\n").unwrap();
    let gt = GroundTruthSet::load(dir.path()).unwrap();
    assert_eq!(gt.len(), 1);
    let boxes = gt.images()[0].pixel_boxes().unwrap();
    assert_eq!(boxes.len(), 1);
    let b = boxes[0].bbox;
    for (got, want) in [(b.x1(), 256.0), (b.y1(), 168.0), (b.x2(), 384.0), (b.y2(), 312.0)] {
        assert!((got - want).abs() < 1e-9, "{b:?}");
    }
}

#[test]
fn bad_label_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    hurovision::preprocess::Image::filled(8, 8, GRASS).unwrap().save(&dir.path().join("a.png")).unwrap();
    std::fs::write(dir.path().join("classes.txt"), "ball\n").unwrap();
    std::fs::write(dir.path().join("a.txt"), "0 0.5 0.5 0.2 0.3\n3 0.5 0.5 0.2 0.3\n").unwrap();
    match GroundTruthSet::load(dir.path()) {
        Err(e @ Error::Load { .. }) => {
            let Error::Load { line, .. } = &e else { unreachable!() };
            assert_eq!(*line, Some(2));
            assert!(e.to_string().contains("a.txt:2"), "{e}");
        }
        other => panic!("{other:?}"),
    }
    std::fs::write(dir.path().join("a.txt"), "").unwrap();
    std::fs::write(dir.path().join("orphan.txt"), "0 0.5 0.5 0.2 0.3\n").unwrap();
    assert!(matches!(GroundTruthSet::load(dir.path()), Err(Error::Load { .. })));
}

fn disk_set(n: usize) -> (tempfile::TempDir, GroundTruthSet) {
    let dir = tempfile::tempdir().unwrap();
    write_disk_dataset(dir.path(), n, &mut StdRng::seed_from_u64(11));
    let gt = GroundTruthSet::load(dir.path()).unwrap();
    (dir, gt)
}

fn relabel(m: &DetectionMessage, class_id: u32, label: &str) -> DetectionMessage {
    let dets = m
        .detections()
        .iter()
        .map(|d| WireDetection::new(class_id, label, d.confidence(), *d.bbox()).unwrap())
        .collect();
    DetectionMessage::new(m.frame_id(), m.timestamp(), m.frame_w(), m.frame_h(), dets).unwrap()
}

fn static_bench(dir: &std::path::Path, gt: &GroundTruthSet, log: Vec<DetectionMessage>) -> hurovision::evaluation::EvalReport {
    let clock = Arc::new(SimClock::new());
    let mut det = ScriptedDetector::new(gt.class_map().clone(), log)
        .unwrap()
        .with_latency(50.0, clock.clone())
        .unwrap();
    let mut src = ImageDirSource::open(dir, 30.0).unwrap();
    run_benchmark(&mut det, &mut src, Some(gt), clock.as_ref(), &BenchConfig::new(BenchMode::Static, 60.0))
        .unwrap()
        .report
}

#[test]
fn replaying_ground_truth_is_perfect() {
    let (dir, gt) = disk_set(6);
    let report = static_bench(dir.path(), &gt, gt.as_messages().unwrap());
    assert_eq!(report.precision, Some(1.0));
    assert_eq!(report.recall, Some(1.0));
    assert_eq!((report.map50, report.map50_95), (Some(1.0), Some(1.0)));
    assert!(report.confusion.is_diagonal());
    let fps = report.fps.unwrap();
    assert!((fps.mean - 20.0).abs() < 1e-9);
    assert_eq!(fps.frames, 6);
}

#[test]
fn every_tenth_frame_mislabeled_gives_point_nine() {
    let (dir, gt) = disk_set(20);
    let log: Vec<DetectionMessage> = gt
        .as_messages()
        .unwrap()
        .iter()
        .map(|m| if m.frame_id() % 10 == 0 { relabel(m, 1, "basket") } else { m.clone() })
        .collect();
    let report = static_bench(dir.path(), &gt, log.clone());
    assert!((report.precision.unwrap() - 0.9).abs() < 1e-12);
    assert!((report.recall.unwrap() - 0.9).abs() < 1e-12);
    // ball predicted as basket twice
    assert_eq!(report.confusion.get(0, 1), 2);

    let offline = evaluate_log(&gt, &PredictionLog::new(log).unwrap(), &EvalConfig::default()).unwrap();
    assert_eq!(offline.precision, report.precision);
    assert_eq!(offline.confusion, report.confusion);
}

#[test]
fn precision_modes_need_ground_truth() {
    let (dir, _gt) = disk_set(2);
    let clock = SimClock::new();
    let mut det = ScriptedDetector::new(ClassMap::for_event(Event::Basketball), vec![]).unwrap();
    let mut src = ImageDirSource::open(dir.path(), 30.0).unwrap();
    for mode in [BenchMode::Static, BenchMode::Dynamic] {
        let r = run_benchmark(&mut det, &mut src, None, &clock, &BenchConfig::new(mode, 10.0));
        assert!(matches!(r, Err(Error::Config(_))));
    }
}

#[test]
fn mismatched_class_maps_are_rejected() {
    let (_dir, gt) = disk_set(2);
    let msgs: Vec<DetectionMessage> = gt.as_messages().unwrap().iter().map(|m| relabel(m, 0, "target")).collect();
    let log = PredictionLog::new(msgs).unwrap();
    assert!(matches!(evaluate_log(&gt, &log, &EvalConfig::default()), Err(Error::Config(_))));
}

#[test]
fn dynamic_mode_applies_the_schedule() {
    let (dir, gt) = disk_set(30);
    let clock = Arc::new(SimClock::new());
    let mut det = ScriptedDetector::new(gt.class_map().clone(), gt.as_messages().unwrap())
        .unwrap()
        .with_latency(1.0, clock.clone())
        .unwrap();
    let mut src = ImageDirSource::open(dir.path(), 30.0).unwrap();
    let cfg = BenchConfig {
        skip: 3,
        ..BenchConfig::new(BenchMode::Dynamic, 60.0)
    };
    let out = run_benchmark(&mut det, &mut src, Some(&gt), clock.as_ref(), &cfg).unwrap();
    assert_eq!(out.predictions.len(), 10);
    assert_eq!(out.report.precision, Some(1.0));
}

#[test]
fn simulated_benchmarks_are_reproducible() {
    let run = || {
        let clock = Arc::new(SimClock::new());
        let mut det = ScriptedDetector::new(ClassMap::for_event(Event::Basketball), vec![])
            .unwrap()
            .with_latency(33.0, clock.clone())
            .unwrap();
        let mut src = hurovision::source::BlankSource::new(16, 16, 5, 30.0, GRASS).unwrap();
        run_benchmark(&mut det, &mut src, None, clock.as_ref(), &BenchConfig::new(BenchMode::Idle, 5.0))
            .unwrap()
            .report
            .to_json()
    };
    assert_eq!(run(), run());
}

fn ap50(images: &[ImageEval], class_id: u32) -> Option<f64> {
    average_precision(&class_hits(images, 3, 0.5)[class_id as usize], class_id).ok()
}

fn dataset() -> impl Strategy<Value = Vec<ImageEval>> {
    any::<u64>().prop_map(|seed| random_dataset(&mut StdRng::seed_from_u64(seed), 3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn map50_95_never_exceeds_map50(data in dataset()) {
        if let Ok((m50, m5095)) = map_scores(&ap_table(&data, 3)) {
            prop_assert!(m5095 <= m50 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&m50));
        }
    }

    #[test]
    fn extra_false_positive_never_raises_ap(data in dataset(), conf in 0.0f64..=1.0, class_id in 0u32..3, at in 0usize..10) {
        let before = ap50(&data, class_id);
        let mut more = data.clone();
        let k = at % more.len();
        // far outside every ground-truth box
        more[k].preds.push(PredBox { class_id, confidence: conf, bbox: pb(500.0, 500.0, 510.0, 510.0) });
        let after = ap50(&more, class_id);
        if let (Some(b), Some(a)) = (before, after) {
            prop_assert!(a <= b + 1e-12, "{b} -> {a}");
        }
    }

    #[test]
    fn extra_true_positive_never_lowers_ap(data in dataset(), conf in 0.0f64..=1.0) {
        // find a ground truth left unmatched at IoU 0.5 and predict it exactly
        let target = data.iter().enumerate().find_map(|(i, img)| {
            let m = match_detections(&img.preds, &img.gts, 0.5);
            m.gt_matched.iter().position(|&x| !x).map(|j| (i, img.gts[j]))
        });
        if let Some((i, g)) = target {
            let before = ap50(&data, g.class_id).unwrap();
            let mut more = data.clone();
            more[i].preds.push(PredBox { class_id: g.class_id, confidence: conf, bbox: g.bbox });
            let after = ap50(&more, g.class_id).unwrap();
            prop_assert!(after >= before - 1e-12, "{before} -> {after}");
        }
    }

    #[test]
    fn matching_ignores_list_order(data in dataset(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = StdRng::seed_from_u64(seed);
        for img in &data {
            // distinct confidences make the ranking independent of input order
            let preds: Vec<PredBox> = img
                .preds
                .iter()
                .enumerate()
                .map(|(k, p)| PredBox { confidence: (p.confidence - k as f64 * 1e-4).max(0.0), ..*p })
                .collect();
            let m = match_detections(&preds, &img.gts, 0.5);
            let mut perm: Vec<usize> = (0..preds.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<PredBox> = perm.iter().map(|&k| preds[k]).collect();
            let ms = match_detections(&shuffled, &img.gts, 0.5);
            for (pos, &k) in perm.iter().enumerate() {
                prop_assert_eq!(ms.preds[pos].gt, m.preds[k].gt);
            }
        }
    }

    #[test]
    fn greedy_matching_equals_exhaustive_reference(data in dataset(), t in 0.3f64..0.95) {
        for img in &data {
            let got: Vec<Option<usize>> = match_detections(&img.preds, &img.gts, t).preds.iter().map(|p| p.gt).collect();
            prop_assert_eq!(got, ref_match(&img.preds, &img.gts, t));
        }
    }

    #[test]
    fn precision_and_recall_count_matches(data in dataset(), conf_t in 0.0f64..0.9) {
        let (p, r) = precision_recall(&data, 0.5, conf_t);
        let mut tp = 0usize;
        let (mut n_pred, mut n_gt) = (0usize, 0usize);
        for img in &data {
            let kept: Vec<PredBox> = img.preds.iter().copied().filter(|p| p.confidence > conf_t).collect();
            tp += ref_match(&kept, &img.gts, 0.5).iter().filter(|m| m.is_some()).count();
            n_pred += kept.len();
            n_gt += img.gts.len();
        }
        prop_assert_eq!(p, (n_pred > 0).then(|| tp as f64 / n_pred as f64));
        prop_assert_eq!(r, (n_gt > 0).then(|| tp as f64 / n_gt as f64));
    }
}
