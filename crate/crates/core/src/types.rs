//! Geometric and detection value types shared by every stage of the pipeline.
//!
//! Boxes are kept in pixel-corner form ([`PixelBox`]) internally. The
//! normalized center form ([`NormBox`]) only appears at dataset and wire
//! boundaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, top-left origin, continuous values.
///
/// Construction rejects non-finite coordinates and zero or negative extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PixelBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl PixelBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::geometry(format!(
                "non-finite box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::geometry(format!(
                "zero-area box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Intersection with `[0,width]×[0,height]`. Fails if nothing with positive
    /// area is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Result<Self> {
        check_frame(width, height)?;
        Self::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn contains(&self, other: &PixelBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl fmt::Display for PixelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2}, {:.2}, {:.2})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Box as normalized center and size, each in `[0,1]` relative to the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl NormBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::geometry(format!(
                "non-finite normalized box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return Err(Error::geometry(format!("center ({cx}, {cy}) outside unit square")));
        }
        if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return Err(Error::geometry(format!("size ({w}, {h}) outside (0,1]")));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
}

fn check_frame(width: f64, height: f64) -> Result<()> {
    if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
        return Err(Error::geometry(format!("invalid frame {width}x{height}")));
    }
    Ok(())
}

/// Converts a normalized box to pixel corners, clamped to the frame.
pub fn norm_to_pixel(b: &NormBox, width: u32, height: u32) -> Result<PixelBox> {
    let (fw, fh) = (width as f64, height as f64);
    check_frame(fw, fh)?;
    let x1 = (b.cx - b.w / 2.0) * fw;
    let y1 = (b.cy - b.h / 2.0) * fh;
    let x2 = (b.cx + b.w / 2.0) * fw;
    let y2 = (b.cy + b.h / 2.0) * fh;
    PixelBox::new(x1, y1, x2, y2)?.clamp_to(fw, fh)
}

/// Converts pixel corners to a normalized box; the inverse of [`norm_to_pixel`]
/// for boxes inside the frame.
pub fn pixel_to_norm(b: &PixelBox, width: u32, height: u32) -> Result<NormBox> {
    let (fw, fh) = (width as f64, height as f64);
    let c = b.clamp_to(fw, fh)?;
    NormBox::new(
        (c.x1 + c.x2) / 2.0 / fw,
        (c.y1 + c.y2) / 2.0 / fh,
        c.width() / fw,
        c.height() / fh,
    )
}

/// Competition event whose object set a model or profile covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Basketball,
    Archery,
    Marathon,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Basketball => "basketball",
            Event::Archery => "archery",
            Event::Marathon => "marathon",
        }
    }
}

impl std::str::FromStr for Event {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basketball" => Ok(Event::Basketball),
            "archery" => Ok(Event::Archery),
            "marathon" => Ok(Event::Marathon),
            other => Err(Error::Config(format!(
                "unknown event profile {other:?} (expected basketball, archery or marathon)"
            ))),
        }
    }
}

/// Ordered class labels; the class id is the position in the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    labels: Vec<String>,
}

impl ClassMap {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::InvalidArgument(format!("class {i} has an empty label")));
            }
            if labels[..i].contains(l) {
                return Err(Error::InvalidArgument(format!("duplicate class label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn for_event(event: Event) -> Self {
        let labels: &[&str] = match event {
            Event::Basketball => &["ball", "basket"],
            Event::Archery => &["target"],
            Event::Marathon => &["line", "right_arrow", "left_arrow", "forward_arrow"],
        };
        Self::new(labels.iter().copied()).expect("built-in class maps are valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, class_id: u32) -> Option<&str> {
        self.labels.get(class_id as usize).map(String::as_str)
    }

    pub fn id_of(&self, label: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == label).map(|i| i as u32)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.labels.iter().enumerate().map(|(i, l)| (i as u32, l.as_str()))
    }
}

/// One classified, scored box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub class_id: u32,
    pub label: String,
    confidence: f64,
    pub bbox: PixelBox,
    pub frame_id: u64,
}

impl Detection {
    pub fn new(
        class_id: u32,
        label: impl Into<String>,
        confidence: f64,
        bbox: PixelBox,
        frame_id: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0,1]"
            )));
        }
        Ok(Self {
            class_id,
            label: label.into(),
            confidence,
            bbox,
            frame_id,
        })
    }

    /// Builds a detection whose label is looked up in `classes`.
    pub fn with_class_map(
        classes: &ClassMap,
        class_id: u32,
        confidence: f64,
        bbox: PixelBox,
        frame_id: u64,
    ) -> Result<Self> {
        let label = classes
            .label(class_id)
            .ok_or_else(|| Error::InvalidArgument(format!("class id {class_id} not in class map")))?;
        Self::new(class_id, label, confidence, bbox, frame_id)
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Per-frame metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMeta {
    pub frame_id: u64,
    /// Monotonic seconds since stream start.
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
}

impl FrameMeta {
    pub fn new(frame_id: u64, timestamp: f64, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::geometry(format!("frame {frame_id} is {width}x{height}")));
        }
        if !timestamp.is_finite() {
            return Err(Error::InvalidArgument(format!("frame {frame_id} timestamp {timestamp}")));
        }
        Ok(Self {
            frame_id,
            timestamp,
            width,
            height,
        })
    }
}

/// All detections for one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSet {
    meta: FrameMeta,
    detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(meta: FrameMeta, detections: Vec<Detection>) -> Result<Self> {
        let (w, h) = (meta.width as f64, meta.height as f64);
        for (i, d) in detections.iter().enumerate() {
            if d.frame_id != meta.frame_id {
                return Err(Error::InvalidArgument(format!(
                    "detection {i} belongs to frame {} not {}",
                    d.frame_id, meta.frame_id
                )));
            }
            if !d.bbox.within(w, h) {
                return Err(Error::geometry(format!(
                    "detection {i} box {} outside {}x{} frame",
                    d.bbox, meta.width, meta.height
                )));
            }
        }
        Ok(Self { meta, detections })
    }

    pub fn empty(meta: FrameMeta) -> Self {
        Self {
            meta,
            detections: Vec::new(),
        }
    }

    pub fn meta(&self) -> &FrameMeta {
        &self.meta
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }

    /// Keeps detections in their original order for which `keep` holds.
    pub(crate) fn retain(mut self, keep: impl FnMut(&Detection) -> bool) -> Self {
        self.detections.retain(keep);
        self
    }

    pub(crate) fn with_detections(meta: FrameMeta, detections: Vec<Detection>) -> Self {
        Self { meta, detections }
    }
}
