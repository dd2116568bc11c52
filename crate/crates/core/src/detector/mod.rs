//! Detector backends behind one interface, and the [`Pipeline`] wrapper that
//! runs letterbox, backend, confidence filter, NMS and the inverse mapping.

mod external;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::bridge::{read_jsonl, DetectionMessage};
use crate::error::{Error, Result};
use crate::geometric::{detect_all, GeoProfile};
use crate::postprocess::{confidence_filter, nms, NmsConfig};
use crate::preprocess::{apply_letterbox, letterbox_params, unletterbox_box, Image, DEFAULT_FILL};
use crate::scheduling::{Clock, SimClock};
use crate::types::{ClassMap, Detection, DetectionSet, FrameMeta};

pub use external::{ExternalDetector, InferenceServer};

/// Static metadata of a backend.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptor {
    pub name: String,
    pub class_map: ClassMap,
    /// Square model-plane size the backend expects, or `None` when it works
    /// directly on source frames.
    pub input_size: Option<u32>,
    /// Declared per-call latency.
    pub latency_ms: f64,
}

/// A detection backend. Single owner, one call in flight.
pub trait Detector: Send {
    fn descriptor(&self) -> &Descriptor;

    /// Current metadata; remote backends do a live round trip.
    fn probe(&mut self) -> Result<Descriptor> {
        Ok(self.descriptor().clone())
    }

    /// Detections on `img`, whose size must equal `meta`'s.
    fn detect(&mut self, img: &Image, meta: &FrameMeta) -> Result<DetectionSet>;
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn descriptor(&self) -> &Descriptor {
        (**self).descriptor()
    }

    fn probe(&mut self) -> Result<Descriptor> {
        (**self).probe()
    }

    fn detect(&mut self, img: &Image, meta: &FrameMeta) -> Result<DetectionSet> {
        (**self).detect(img, meta)
    }
}

pub(crate) fn check_frame(img: &Image, meta: &FrameMeta) -> Result<()> {
    if img.width() != meta.width || img.height() != meta.height {
        return Err(Error::InvalidArgument(format!(
            "frame {} is {}x{} but its metadata says {}x{}",
            meta.frame_id,
            img.width(),
            img.height(),
            meta.width,
            meta.height
        )));
    }
    Ok(())
}

/// Color-segmentation baseline.
#[derive(Debug, Clone)]
pub struct GeometricDetector {
    profile: GeoProfile,
    descriptor: Descriptor,
}

impl GeometricDetector {
    pub fn new(profile: GeoProfile) -> Self {
        let descriptor = Descriptor {
            name: "geometric".into(),
            class_map: profile.class_map().clone(),
            input_size: None,
            latency_ms: 0.0,
        };
        Self { profile, descriptor }
    }

    pub fn profile(&self) -> &GeoProfile {
        &self.profile
    }
}

impl Detector for GeometricDetector {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn detect(&mut self, img: &Image, meta: &FrameMeta) -> Result<DetectionSet> {
        check_frame(img, meta)?;
        DetectionSet::new(*meta, detect_all(img, &self.profile, meta.frame_id))
    }
}

/// Replays a prediction log keyed by frame id, optionally after a fixed
/// latency spent on an injected clock.
pub struct ScriptedDetector {
    log: HashMap<u64, DetectionMessage>,
    descriptor: Descriptor,
    clock: Arc<dyn Clock>,
    latency: Duration,
}

impl ScriptedDetector {
    pub fn new(class_map: ClassMap, log: Vec<DetectionMessage>) -> Result<Self> {
        let mut by_frame = HashMap::with_capacity(log.len());
        for m in log {
            m.check_classes(&class_map)?;
            let id = m.frame_id();
            if by_frame.insert(id, m).is_some() {
                return Err(Error::Config(format!("frame {id} appears twice in the scripted log")));
            }
        }
        Ok(Self {
            log: by_frame,
            descriptor: Descriptor {
                name: "scripted".into(),
                class_map,
                input_size: None,
                latency_ms: 0.0,
            },
            clock: Arc::new(SimClock::new()),
            latency: Duration::ZERO,
        })
    }

    pub fn from_jsonl(path: &Path, class_map: ClassMap) -> Result<Self> {
        Self::new(class_map, read_jsonl(path)?)
    }

    /// Each call sleeps `latency_ms` on `clock` before answering.
    pub fn with_latency(mut self, latency_ms: f64, clock: Arc<dyn Clock>) -> Result<Self> {
        if !(latency_ms.is_finite() && latency_ms >= 0.0) {
            return Err(Error::InvalidArgument(format!("latency {latency_ms} ms")));
        }
        self.latency = Duration::from_secs_f64(latency_ms / 1000.0);
        self.descriptor.latency_ms = latency_ms;
        self.clock = clock;
        Ok(self)
    }

    /// Makes the backend expect letterboxed frames of `size`; logged boxes are
    /// then interpreted on the model plane.
    pub fn with_input_size(mut self, size: Option<u32>) -> Self {
        self.descriptor.input_size = size;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.descriptor.name = name.into();
        self
    }
}

impl Detector for ScriptedDetector {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn detect(&mut self, img: &Image, meta: &FrameMeta) -> Result<DetectionSet> {
        check_frame(img, meta)?;
        if !self.latency.is_zero() {
            self.clock.sleep(self.latency);
        }
        match self.log.get(&meta.frame_id) {
            Some(m) => {
                let set = m.to_set_with_size(meta.width, meta.height)?;
                DetectionSet::new(*meta, set.into_detections())
            }
            None => Ok(DetectionSet::empty(*meta)),
        }
    }
}

/// Full inference sequence around a backend: letterbox to the backend's
/// input size, detect, confidence filter, NMS, map back to the source frame
/// and clamp. Boxes that collapse under clamping are dropped.
pub struct Pipeline<D> {
    backend: D,
    nms: NmsConfig,
    fill: u8,
    descriptor: Descriptor,
}

impl<D: Detector> Pipeline<D> {
    pub fn new(backend: D, nms: NmsConfig) -> Self {
        let descriptor = Descriptor {
            input_size: None,
            ..backend.descriptor().clone()
        };
        Self {
            backend,
            nms,
            fill: DEFAULT_FILL,
            descriptor,
        }
    }

    pub fn backend(&self) -> &D {
        &self.backend
    }

    pub fn nms_config(&self) -> &NmsConfig {
        &self.nms
    }
}

impl<D: Detector> Detector for Pipeline<D> {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn probe(&mut self) -> Result<Descriptor> {
        let d = self.backend.probe()?;
        self.descriptor = Descriptor { input_size: None, ..d };
        Ok(self.descriptor.clone())
    }

    fn detect(&mut self, img: &Image, meta: &FrameMeta) -> Result<DetectionSet> {
        check_frame(img, meta)?;
        let Some(size) = self.backend.descriptor().input_size else {
            let raw = self.backend.detect(img, meta)?;
            let kept = nms(confidence_filter(raw, self.nms.confidence_threshold()), &self.nms);
            return Ok(kept);
        };
        let params = letterbox_params(meta.width, meta.height, size)?;
        let plane = apply_letterbox(img, &params, self.fill)?;
        let plane_meta = FrameMeta::new(meta.frame_id, meta.timestamp, size, size)?;
        let raw = self.backend.detect(&plane, &plane_meta)?;
        let kept = nms(confidence_filter(raw, self.nms.confidence_threshold()), &self.nms);
        let (w, h) = (meta.width as f64, meta.height as f64);
        let mapped: Vec<Detection> = kept
            .into_detections()
            .into_iter()
            .filter_map(|d| {
                let b = unletterbox_box(&d.bbox, &params).ok()?.clamp_to(w, h).ok()?;
                let mut d = d;
                d.bbox = b;
                d.frame_id = meta.frame_id;
                Some(d)
            })
            .collect();
        DetectionSet::new(*meta, mapped)
    }
}
