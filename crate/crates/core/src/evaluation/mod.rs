//! Accuracy and speed measurement: dataset loading, matching, AP/mAP,
//! confusion matrices and the idle/static/dynamic benchmark procedures.

mod dataset;
mod metrics;

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::bridge::DetectionMessage;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::scheduling::{percentile, Clock, FpsMeter, LoadStrategy, Schedule};
use crate::source::FrameSource;
use crate::types::{ClassMap, DetectionSet};

pub use dataset::{
    load_classes, parse_label_line, write_labels, GroundTruthSet, GtImage, GtObject, PredictionLog,
    CLASSES_FILE,
};
pub use metrics::{
    ap_table, average_precision, class_hits, confusion_matrix, iou_thresholds, map_scores,
    match_detections, precision_recall, ClassHits, ConfusionMatrix, GtBox, ImageEval, MatchResult,
    PredBox, PredMatch,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    /// IoU criterion for precision, recall and the confusion matrix.
    pub iou_t: f64,
    /// Predictions must score above this to count for precision and recall.
    pub conf_t: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_t: 0.5,
            conf_t: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub label: String,
    pub ground_truths: usize,
    pub ap50: Option<f64>,
    pub ap50_95: Option<f64>,
    /// AP at 0.50, 0.55, ..., 0.95.
    pub ap: Option<[f64; 10]>,
}

/// Throughput of a benchmark run. Percentile FPS values are derived from the
/// per-frame latency at that percentile, so `p95` describes the slow tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FpsStats {
    pub mean: f64,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub latency_ms_p50: Option<f64>,
    pub latency_ms_p95: Option<f64>,
    pub frames: u64,
    pub elapsed_s: f64,
}

impl FpsStats {
    fn from_latencies(mean: f64, latencies_s: &[f64], elapsed_s: f64) -> Self {
        let at = |q| percentile(latencies_s, q);
        let fps = |l: f64| (l > 0.0).then(|| 1.0 / l);
        Self {
            mean,
            p50: at(0.5).and_then(fps),
            p95: at(0.95).and_then(fps),
            latency_ms_p50: at(0.5).map(|l| l * 1000.0),
            latency_ms_p95: at(0.95).map(|l| l * 1000.0),
            frames: latencies_s.len() as u64,
            elapsed_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub detector: Option<String>,
    pub mode: Option<BenchMode>,
    pub images: usize,
    pub ground_truths: usize,
    pub predictions: usize,
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
    pub classes: Vec<ClassReport>,
    /// Confusion-matrix axis labels; the last one is background.
    pub labels: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub fps: Option<FpsStats>,
}

/// Every accuracy metric over `images`.
pub fn evaluate(images: &[ImageEval], class_map: &ClassMap, cfg: &EvalConfig) -> EvalReport {
    let k = class_map.len();
    let table = ap_table(images, k);
    let maps = map_scores(&table).ok();
    let (precision, recall) = precision_recall(images, cfg.iou_t, cfg.conf_t);
    let mut confusion = ConfusionMatrix::new(k);
    for img in images {
        confusion.add(&confusion_matrix(&img.preds, &img.gts, k, cfg.iou_t, cfg.conf_t));
    }
    let mut gt_counts = vec![0usize; k];
    for g in images.iter().flat_map(|i| &i.gts) {
        if let Some(c) = gt_counts.get_mut(g.class_id as usize) {
            *c += 1;
        }
    }
    let classes = class_map
        .iter()
        .map(|(id, label)| {
            let ap = table[id as usize];
            ClassReport {
                class_id: id,
                label: label.to_owned(),
                ground_truths: gt_counts[id as usize],
                ap50: ap.map(|r| r[0]),
                ap50_95: ap.map(|r| r.iter().sum::<f64>() / 10.0),
                ap,
            }
        })
        .collect();
    let mut labels = class_map.labels().to_vec();
    labels.push("background".into());
    EvalReport {
        detector: None,
        mode: None,
        images: images.len(),
        ground_truths: images.iter().map(|i| i.gts.len()).sum(),
        predictions: images.iter().map(|i| i.preds.len()).sum(),
        iou_threshold: cfg.iou_t,
        conf_threshold: cfg.conf_t,
        precision,
        recall,
        map50: maps.map(|m| m.0),
        map50_95: maps.map(|m| m.1),
        classes,
        labels,
        confusion,
        fps: None,
    }
}

/// Scores a prediction log against ground truth. Class maps must agree.
pub fn evaluate_log(gt: &GroundTruthSet, log: &PredictionLog, cfg: &EvalConfig) -> Result<EvalReport> {
    log.check_against(gt)?;
    let images = gt
        .images()
        .iter()
        .map(|img| {
            Ok(ImageEval {
                gts: img.pixel_boxes()?,
                preds: log.pred_boxes(img)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&images, gt.class_map(), cfg))
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.1}%", v * 100.0)).unwrap_or_else(|| "-".into())
}

fn num(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary, per-class AP and confusion matrix.
    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.detector {
            let mode = self.mode.map(|m| format!(" ({})", m.name())).unwrap_or_default();
            let _ = writeln!(s, "detector: {d}{mode}");
        }
        let _ = writeln!(
            s,
            "images {}  ground truths {}  predictions {}  (IoU {} conf > {})",
            self.images, self.ground_truths, self.predictions, self.iou_threshold, self.conf_threshold
        );
        let _ = writeln!(
            s,
            "Precision {}  Recall {}  mAP50 {}  mAP50-95 {}",
            pct(self.precision),
            pct(self.recall),
            num(self.map50),
            num(self.map50_95)
        );
        if let Some(f) = &self.fps {
            let _ = writeln!(
                s,
                "FPS mean {:.2}  p50 {}  p95 {}  over {} frames in {:.2} s",
                f.mean,
                num(f.p50),
                num(f.p95),
                f.frames,
                f.elapsed_s
            );
        }
        let width = self.labels.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "\n{:<width$}  {:>6}  {:>7}  {:>9}", "class", "GT", "AP50", "AP50-95");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<width$}  {:>6}  {:>7}  {:>9}",
                c.label,
                c.ground_truths,
                num(c.ap50),
                num(c.ap50_95)
            );
        }
        let _ = write!(s, "\nconfusion (rows true, columns predicted)\n{:<width$}", "");
        for l in &self.labels {
            let _ = write!(s, " {:>w$}", l, w = l.len().max(4));
        }
        s.push('\n');
        for (i, row) in self.confusion.cells.iter().enumerate() {
            let _ = write!(s, "{:<width$}", self.labels[i]);
            for (j, v) in row.iter().enumerate() {
                let _ = write!(s, " {:>w$}", v, w = self.labels[j].len().max(4));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Throughput only, over object-free frames.
    Idle,
    /// Throughput and precision over a fixed annotated set.
    Static,
    /// Throughput and precision over a motion sequence replayed at source
    /// rate through the frame schedule.
    Dynamic,
}

impl BenchMode {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMode::Idle => "idle",
            BenchMode::Static => "static",
            BenchMode::Dynamic => "dynamic",
        }
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idle" => Ok(BenchMode::Idle),
            "static" => Ok(BenchMode::Static),
            "dynamic" => Ok(BenchMode::Dynamic),
            other => Err(Error::Config(format!("unknown benchmark mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub mode: BenchMode,
    /// Idle runs last this long; precision modes stop early if they hit it.
    pub duration_s: f64,
    pub eval: EvalConfig,
    /// Frame skip stride used in dynamic mode.
    pub skip: u64,
    /// Rate cap used in dynamic mode.
    pub rate_cap: Option<f64>,
}

impl BenchConfig {
    pub fn new(mode: BenchMode, duration_s: f64) -> Self {
        Self {
            mode,
            duration_s,
            eval: EvalConfig::default(),
            skip: 1,
            rate_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub report: EvalReport,
    /// One message per processed frame, in processing order.
    pub predictions: Vec<DetectionMessage>,
}

/// Frames the idle loop may process without the clock moving before it
/// concludes time is frozen.
const STALLED_FRAMES: u32 = 10_000;

/// Drives `detector` over `source` and measures it.
pub fn run_benchmark(
    detector: &mut dyn Detector,
    source: &mut dyn FrameSource,
    gt: Option<&GroundTruthSet>,
    clock: &dyn Clock,
    cfg: &BenchConfig,
) -> Result<BenchOutcome> {
    if !(cfg.duration_s.is_finite() && cfg.duration_s > 0.0) {
        return Err(Error::Config(format!("benchmark duration {} must be > 0", cfg.duration_s)));
    }
    if source.is_empty() {
        return Err(Error::Config("benchmark source has no frames".into()));
    }
    let name = detector.descriptor().name.clone();
    let mut outcome = match cfg.mode {
        BenchMode::Idle => idle(detector, source, clock, cfg)?,
        BenchMode::Static | BenchMode::Dynamic => {
            let gt = gt.ok_or_else(|| {
                Error::Config(format!("{} benchmark needs ground truth", cfg.mode.name()))
            })?;
            if gt.len() != source.len() {
                return Err(Error::Config(format!(
                    "source has {} frames but ground truth has {} images",
                    source.len(),
                    gt.len()
                )));
            }
            annotated(detector, source, gt, clock, cfg)?
        }
    };
    outcome.report.detector = Some(name);
    outcome.report.mode = Some(cfg.mode);
    Ok(outcome)
}

fn idle(
    detector: &mut dyn Detector,
    source: &mut dyn FrameSource,
    clock: &dyn Clock,
    cfg: &BenchConfig,
) -> Result<BenchOutcome> {
    let meter = FpsMeter::new(cfg.duration_s)?;
    let start = clock.now();
    let mut latencies = Vec::new();
    let mut predictions = Vec::new();
    let mut stalled = 0u32;
    let mut i = 0u64;
    while clock.now() - start < cfg.duration_s {
        let frame = source.frame((i as usize) % source.len(), i)?;
        let t0 = clock.now();
        let set = detector.detect(&frame.image, &frame.meta)?;
        let t1 = clock.now();
        meter.tick(t1);
        latencies.push(t1 - t0);
        predictions.push(DetectionMessage::from_set(&set)?);
        stalled = if t1 > t0 { 0 } else { stalled + 1 };
        if stalled >= STALLED_FRAMES {
            return Err(Error::Config(
                "clock does not advance during detection; idle benchmarks need a detector latency".into(),
            ));
        }
        i += 1;
    }
    let elapsed = clock.now() - start;
    let mean = meter.report(start + cfg.duration_s)?;
    let class_map = detector.descriptor().class_map.clone();
    let mut report = evaluate(&[], &class_map, &cfg.eval);
    report.predictions = predictions.iter().map(|m| m.detections().len()).sum();
    report.fps = Some(FpsStats::from_latencies(mean, &latencies, elapsed));
    Ok(BenchOutcome { report, predictions })
}

fn annotated(
    detector: &mut dyn Detector,
    source: &mut dyn FrameSource,
    gt: &GroundTruthSet,
    clock: &dyn Clock,
    cfg: &BenchConfig,
) -> Result<BenchOutcome> {
    if detector.descriptor().class_map != *gt.class_map() {
        return Err(Error::Config(format!(
            "detector classes {:?} differ from ground-truth classes {:?}",
            detector.descriptor().class_map.labels(),
            gt.class_map().labels()
        )));
    }
    let mut schedule = match cfg.mode {
        BenchMode::Dynamic => Schedule::new(cfg.skip, cfg.rate_cap)?,
        _ => Schedule::unlimited(),
    };
    let start = clock.now();
    let mut latencies = Vec::new();
    let mut predictions = Vec::new();
    let mut images = Vec::new();
    for (i, gt_img) in gt.images().iter().enumerate() {
        if clock.now() - start >= cfg.duration_s {
            break;
        }
        if cfg.mode == BenchMode::Dynamic {
            let due = start + i as f64 / source.fps();
            let now = clock.now();
            if due > now {
                clock.sleep(std::time::Duration::from_secs_f64(due - now));
            }
            if !schedule.admit(i as u64, clock.now())? {
                continue;
            }
        }
        let frame = source.frame(i, i as u64)?;
        let t0 = clock.now();
        let set = detector.detect(&frame.image, &frame.meta)?;
        latencies.push(clock.now() - t0);
        images.push(ImageEval {
            gts: gt_img.pixel_boxes()?,
            preds: pred_boxes(&set),
        });
        predictions.push(DetectionMessage::from_set(&set)?);
    }
    let elapsed = clock.now() - start;
    let mut report = evaluate(&images, gt.class_map(), &cfg.eval);
    let mean = if elapsed > 0.0 { latencies.len() as f64 / elapsed } else { f64::INFINITY };
    report.fps = mean
        .is_finite()
        .then(|| FpsStats::from_latencies(mean, &latencies, elapsed));
    Ok(BenchOutcome { report, predictions })
}

fn pred_boxes(set: &DetectionSet) -> Vec<PredBox> {
    set.detections()
        .iter()
        .map(|d| PredBox {
            class_id: d.class_id,
            confidence: d.confidence(),
            bbox: d.bbox,
        })
        .collect()
}

/// Two benchmark reports side by side; deltas are `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: EvalReport,
    pub b: EvalReport,
    pub delta_fps: Option<f64>,
    pub delta_precision: Option<f64>,
}

impl Comparison {
    pub fn new(a: EvalReport, b: EvalReport) -> Self {
        let fps = |r: &EvalReport| r.fps.map(|f| f.mean);
        let delta = |x: Option<f64>, y: Option<f64>| Some(y? - x?);
        Self {
            delta_fps: delta(fps(&a), fps(&b)),
            delta_precision: delta(a.precision, b.precision),
            a,
            b,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let name = |r: &EvalReport| r.detector.clone().unwrap_or_else(|| "?".into());
        let width = name(&self.a).len().max(name(&self.b).len()).max(8);
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>9}  {:>7}  {:>6}  {:>8}",
            "detector", "FPS", "Precision", "Recall", "mAP50", "mAP50-95"
        );
        for r in [&self.a, &self.b] {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8}  {:>9}  {:>7}  {:>6}  {:>8}",
                name(r),
                r.fps.map(|f| format!("{:.2}", f.mean)).unwrap_or_else(|| "-".into()),
                pct(r.precision),
                pct(r.recall),
                num(r.map50),
                num(r.map50_95)
            );
        }
        let signed = |v: Option<f64>, scale: f64, unit: &str| {
            v.map(|v| format!("{:+.2}{unit}", v * scale)).unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}  {:>9}",
            "delta",
            signed(self.delta_fps, 1.0, ""),
            signed(self.delta_precision, 100.0, "%")
        );
        s
    }
}
