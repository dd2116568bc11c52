//! Confidence filtering, IoU and greedy non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Detection, DetectionSet, PixelBox};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.25;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    iou_threshold: f64,
    confidence_threshold: f64,
    per_class: bool,
}

impl NmsConfig {
    pub fn new(iou_threshold: f64, confidence_threshold: f64, per_class: bool) -> Result<Self> {
        if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "IoU threshold {iou_threshold} outside (0,1)"
            )));
        }
        if !(0.0..=1.0).contains(&confidence_threshold) {
            return Err(Error::InvalidArgument(format!(
                "confidence threshold {confidence_threshold} outside [0,1]"
            )));
        }
        Ok(Self {
            iou_threshold,
            confidence_threshold,
            per_class,
        })
    }

    pub fn iou_threshold(&self) -> f64 {
        self.iou_threshold
    }

    pub fn confidence_threshold(&self) -> f64 {
        self.confidence_threshold
    }

    pub fn per_class(&self) -> bool {
        self.per_class
    }
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            per_class: true,
        }
    }
}

/// Intersection over union. Always in `[0,1]` since [`PixelBox`] has positive area.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Keeps detections with confidence strictly above `threshold`, in order.
pub fn confidence_filter(set: DetectionSet, threshold: f64) -> DetectionSet {
    set.retain(|d| d.confidence() > threshold)
}

/// Descending confidence, ties broken by lower input index.
pub(crate) fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .confidence()
            .partial_cmp(&dets[i].confidence())
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Greedy hard NMS. Output is sorted by descending confidence.
pub fn nms(set: DetectionSet, cfg: &NmsConfig) -> DetectionSet {
    let meta = *set.meta();
    let dets = set.into_detections();
    let order = confidence_order(&dets);
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            (!cfg.per_class || dets[k].class_id == dets[i].class_id)
                && iou(&dets[k].bbox, &dets[i].bbox) > cfg.iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<Detection>> = dets.into_iter().map(Some).collect();
    let out = kept
        .into_iter()
        .map(|i| slots[i].take().expect("each index kept once"))
        .collect();
    DetectionSet::with_detections(meta, out)
}
