//! Detection matching and the metrics built on it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::postprocess::iou;
use crate::types::PixelBox;

/// One ground-truth object in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub class_id: u32,
    pub bbox: PixelBox,
}

/// One scored prediction in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredBox {
    pub class_id: u32,
    pub confidence: f64,
    pub bbox: PixelBox,
}

/// Ground truth and predictions of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub gts: Vec<GtBox>,
    pub preds: Vec<PredBox>,
}

/// The COCO IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredMatch {
    pub tp: bool,
    /// Index of the matched ground truth.
    pub gt: Option<usize>,
    /// IoU with the matched ground truth; for false positives, the best IoU
    /// with any ground truth of the same class.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Parallel to the prediction list.
    pub preds: Vec<PredMatch>,
    /// Parallel to the ground-truth list; `false` is a false negative.
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.preds.iter().filter(|m| m.tp).count()
    }

    pub fn fp(&self) -> usize {
        self.preds.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

/// Prediction indices by descending confidence, ties by input index.
fn by_confidence(preds: &[PredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching within each class: predictions in confidence order each
/// take the unmatched ground truth of their class with the highest IoU, if
/// that IoU is at least `iou_t`. Equal IoUs go to the lower ground-truth index.
pub fn match_detections(preds: &[PredBox], gts: &[GtBox], iou_t: f64) -> MatchResult {
    greedy(preds, gts, iou_t, true)
}

fn greedy(preds: &[PredBox], gts: &[GtBox], iou_t: f64, per_class: bool) -> MatchResult {
    let mut gt_matched = vec![false; gts.len()];
    let mut out = vec![
        PredMatch {
            tp: false,
            gt: None,
            iou: 0.0,
        };
        preds.len()
    ];
    for i in by_confidence(preds) {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        let mut best_any = 0.0f64;
        for (j, g) in gts.iter().enumerate() {
            if per_class && g.class_id != p.class_id {
                continue;
            }
            let v = iou(&p.bbox, &g.bbox);
            best_any = best_any.max(v);
            if gt_matched[j] || v < iou_t {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        out[i] = match best {
            Some((j, v)) => {
                gt_matched[j] = true;
                PredMatch {
                    tp: true,
                    gt: Some(j),
                    iou: v,
                }
            }
            None => PredMatch {
                tp: false,
                gt: None,
                iou: best_any,
            },
        };
    }
    MatchResult {
        preds: out,
        gt_matched,
    }
}

/// Scored true/false-positive flags of one class over a dataset, plus the
/// number of ground truths of that class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassHits {
    pub hits: Vec<(f64, bool)>,
    pub ground_truths: usize,
}

/// Collects per-class hits at `iou_t` over all images. Image order is kept,
/// so equal confidences keep a stable order.
pub fn class_hits(images: &[ImageEval], num_classes: usize, iou_t: f64) -> Vec<ClassHits> {
    let mut out = vec![ClassHits::default(); num_classes];
    for img in images {
        let m = match_detections(&img.preds, &img.gts, iou_t);
        for (p, pm) in img.preds.iter().zip(&m.preds) {
            if let Some(c) = out.get_mut(p.class_id as usize) {
                c.hits.push((p.confidence, pm.tp));
            }
        }
        for g in &img.gts {
            if let Some(c) = out.get_mut(g.class_id as usize) {
                c.ground_truths += 1;
            }
        }
    }
    out
}

/// 101-point interpolated average precision of one class.
pub fn average_precision(hits: &ClassHits, class_id: u32) -> Result<f64> {
    if hits.ground_truths == 0 {
        return Err(Error::UndefinedAp(class_id));
    }
    let mut order: Vec<usize> = (0..hits.hits.len()).collect();
    order.sort_by(|&a, &b| hits.hits[b].0.total_cmp(&hits.hits[a].0).then(a.cmp(&b)));
    let n_gt = hits.ground_truths as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for &i in &order {
        if hits.hits[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope: best precision at this recall or beyond
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Ok(sum / 101.0)
}

/// AP of every class at every COCO threshold; `None` where undefined.
pub fn ap_table(images: &[ImageEval], num_classes: usize) -> Vec<Option<[f64; 10]>> {
    let per_threshold: Vec<Vec<ClassHits>> = iou_thresholds()
        .iter()
        .map(|&t| class_hits(images, num_classes, t))
        .collect();
    (0..num_classes)
        .map(|c| {
            let mut row = [0.0; 10];
            for (k, hits) in per_threshold.iter().enumerate() {
                row[k] = average_precision(&hits[c], c as u32).ok()?;
            }
            Some(row)
        })
        .collect()
}

/// `(mAP50, mAP50_95)` over classes with ground truth.
pub fn map_scores(table: &[Option<[f64; 10]>]) -> Result<(f64, f64)> {
    let defined: Vec<&[f64; 10]> = table.iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::NoData("no class has ground truth".into()));
    }
    let n = defined.len() as f64;
    let map50 = defined.iter().map(|r| r[0]).sum::<f64>() / n;
    let map50_95 = defined.iter().map(|r| r.iter().sum::<f64>() / 10.0).sum::<f64>() / n;
    Ok((map50, map50_95))
}

/// Precision and recall over a dataset for predictions scoring above `conf_t`.
/// Precision is `None` without predictions, recall `None` without ground truth.
pub fn precision_recall(images: &[ImageEval], iou_t: f64, conf_t: f64) -> (Option<f64>, Option<f64>) {
    let (mut tp, mut n_pred, mut n_gt) = (0usize, 0usize, 0usize);
    for img in images {
        let preds: Vec<PredBox> = img.preds.iter().copied().filter(|p| p.confidence > conf_t).collect();
        let m = match_detections(&preds, &img.gts, iou_t);
        tp += m.tp();
        n_pred += preds.len();
        n_gt += img.gts.len();
    }
    let p = (n_pred > 0).then(|| tp as f64 / n_pred as f64);
    let r = (n_gt > 0).then(|| tp as f64 / n_gt as f64);
    (p, r)
}

/// Rows are true classes, columns predicted classes; index `num_classes` is
/// background on both axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            cells: vec![vec![0; num_classes + 1]; num_classes + 1],
        }
    }

    pub fn background(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.cells[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.cells
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| i == j || v == 0))
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.cells.iter_mut().flatten().zip(other.cells.iter().flatten()) {
            *a += b;
        }
    }
}

/// Class-agnostic greedy matching of predictions above `conf_t` against the
/// ground truth of one image. A match counts at `(true, predicted)`, an
/// unmatched ground truth at `(true, background)` and an unmatched
/// prediction at `(background, predicted)`.
pub fn confusion_matrix(
    preds: &[PredBox],
    gts: &[GtBox],
    num_classes: usize,
    iou_t: f64,
    conf_t: f64,
) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(num_classes);
    let bg = num_classes;
    let slot = |c: u32| (c as usize).min(bg);
    let preds: Vec<PredBox> = preds.iter().copied().filter(|p| p.confidence > conf_t).collect();
    let m = greedy(&preds, gts, iou_t, false);
    for (p, pm) in preds.iter().zip(&m.preds) {
        match pm.gt {
            Some(j) => cm.cells[slot(gts[j].class_id)][slot(p.class_id)] += 1,
            None => cm.cells[bg][slot(p.class_id)] += 1,
        }
    }
    for (g, matched) in gts.iter().zip(&m.gt_matched) {
        if !matched {
            cm.cells[slot(g.class_id)][bg] += 1;
        }
    }
    cm
}
