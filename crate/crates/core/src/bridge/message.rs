//! JSON wire format for detections.
//!
//! One message per WebSocket text frame, UTF-8, fields in this fixed order:
//!
//! ```text
//! {"schema_version":1,"frame_id":42,"timestamp":2.1,"frame_w":640,"frame_h":480,
//!  "detections":[{"class_id":0,"label":"ball","confidence":0.873421,
//!                 "bbox":{"cx":0.5125,"cy":0.4375,"w":0.125,"h":0.166667}}]}
//! ```
//!
//! Reals carry at most six fractional digits; trailing zeros are trimmed but at
//! least one fractional digit is kept. Message values are quantized to the
//! same grid on construction, so `decode(encode(m)) == m` holds exactly.
//! Unknown fields are ignored when decoding.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::types::{
    norm_to_pixel, pixel_to_norm, ClassMap, Detection, DetectionSet, FrameMeta, NormBox,
};

pub const SCHEMA_VERSION: u32 = 1;

const GRID: f64 = 1e6;

fn quantize(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

/// Formats a real with at most six fractional digits.
fn write_real(out: &mut String, x: f64) {
    let mut s = format!("{:.6}", quantize(x));
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    if s == "-0.0" {
        s = "0.0".into();
    }
    out.push_str(&s);
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireDetection {
    class_id: u32,
    label: String,
    confidence: f64,
    bbox: NormBox,
}

impl WireDetection {
    pub fn new(class_id: u32, label: impl Into<String>, confidence: f64, bbox: NormBox) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(Error::validation("label", "empty"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::validation("confidence", format!("{confidence} outside [0,1]")));
        }
        // the smallest positive extent survives quantization
        let size = |v: f64| quantize(v).max(1.0 / GRID);
        let bbox = NormBox::new(quantize(bbox.cx()), quantize(bbox.cy()), size(bbox.w()), size(bbox.h()))?;
        Ok(Self {
            class_id,
            label,
            confidence: quantize(confidence),
            bbox,
        })
    }

    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn bbox(&self) -> &NormBox {
        &self.bbox
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMessage {
    schema_version: u32,
    frame_id: u64,
    timestamp: f64,
    frame_w: u32,
    frame_h: u32,
    detections: Vec<WireDetection>,
}

impl DetectionMessage {
    pub fn new(
        frame_id: u64,
        timestamp: f64,
        frame_w: u32,
        frame_h: u32,
        detections: Vec<WireDetection>,
    ) -> Result<Self> {
        if !(timestamp.is_finite() && timestamp >= 0.0) {
            return Err(Error::validation("timestamp", format!("{timestamp} is not a non-negative time")));
        }
        if frame_w == 0 || frame_h == 0 {
            return Err(Error::validation("frame_w", "frame dimensions must be positive"));
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            frame_id,
            timestamp: quantize(timestamp),
            frame_w,
            frame_h,
            detections,
        })
    }

    /// Wire form of a detection set; boxes are normalized by the frame size.
    pub fn from_set(set: &DetectionSet) -> Result<Self> {
        let m = set.meta();
        let dets = set
            .detections()
            .iter()
            .map(|d| {
                let nb = pixel_to_norm(&d.bbox, m.width, m.height)?;
                WireDetection::new(d.class_id, d.label.clone(), d.confidence(), nb)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(m.frame_id, m.timestamp.max(0.0), m.width, m.height, dets)
    }

    /// Pixel-space detections on a `width × height` frame.
    pub fn to_set_with_size(&self, width: u32, height: u32) -> Result<DetectionSet> {
        let meta = FrameMeta::new(self.frame_id, self.timestamp, width, height)?;
        let dets = self
            .detections
            .iter()
            .map(|d| {
                let b = norm_to_pixel(&d.bbox, width, height)?;
                Detection::new(d.class_id, d.label.clone(), d.confidence, b, self.frame_id)
            })
            .collect::<Result<Vec<_>>>()?;
        DetectionSet::new(meta, dets)
    }

    pub fn to_set(&self) -> Result<DetectionSet> {
        self.to_set_with_size(self.frame_w, self.frame_h)
    }

    /// Checks that every detection's `(class_id, label)` pair exists in `classes`.
    pub fn check_classes(&self, classes: &ClassMap) -> Result<()> {
        for (i, d) in self.detections.iter().enumerate() {
            if classes.label(d.class_id) != Some(d.label.as_str()) {
                return Err(Error::validation(
                    format!("detections[{i}]"),
                    format!("class {} {:?} not in class map {:?}", d.class_id, d.label, classes.labels()),
                ));
            }
        }
        Ok(())
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }
    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }
    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }
    pub fn frame_w(&self) -> u32 {
        self.frame_w
    }
    pub fn frame_h(&self) -> u32 {
        self.frame_h
    }
    pub fn detections(&self) -> &[WireDetection] {
        &self.detections
    }

    /// Same message with a different timestamp.
    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = quantize(timestamp.max(0.0));
        self
    }
}

/// Canonical UTF-8 JSON encoding.
pub fn encode(m: &DetectionMessage) -> String {
    let mut out = String::with_capacity(96 + 128 * m.detections.len());
    let _ = write!(
        out,
        "{{\"schema_version\":{},\"frame_id\":{},\"timestamp\":",
        m.schema_version, m.frame_id
    );
    write_real(&mut out, m.timestamp);
    let _ = write!(out, ",\"frame_w\":{},\"frame_h\":{},\"detections\":[", m.frame_w, m.frame_h);
    for (i, d) in m.detections.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let label = serde_json::to_string(&d.label).expect("strings always serialize");
        let _ = write!(out, "{{\"class_id\":{},\"label\":{label},\"confidence\":", d.class_id);
        write_real(&mut out, d.confidence);
        out.push_str(",\"bbox\":{\"cx\":");
        write_real(&mut out, d.bbox.cx());
        out.push_str(",\"cy\":");
        write_real(&mut out, d.bbox.cy());
        out.push_str(",\"w\":");
        write_real(&mut out, d.bbox.w());
        out.push_str(",\"h\":");
        write_real(&mut out, d.bbox.h());
        out.push_str("}}");
    }
    out.push_str("]}");
    out
}

/// Parses and validates one message.
pub fn decode(bytes: &[u8]) -> Result<DetectionMessage> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    decode_value(&root)
}

pub(crate) fn decode_value(root: &Value) -> Result<DetectionMessage> {
    let obj = root
        .as_object()
        .ok_or_else(|| Error::validation("$", "message must be a JSON object"))?;
    let version = uint(obj, "schema_version", "schema_version")?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::validation(
            "schema_version",
            format!("unsupported version {version}, expected {SCHEMA_VERSION}"),
        ));
    }
    let frame_id = uint(obj, "frame_id", "frame_id")?;
    let timestamp = real(obj, "timestamp", "timestamp")?;
    if timestamp < 0.0 {
        return Err(Error::validation("timestamp", "negative"));
    }
    let frame_w = dimension(obj, "frame_w")?;
    let frame_h = dimension(obj, "frame_h")?;
    let list = obj
        .get("detections")
        .ok_or_else(|| Error::validation("detections", "missing"))?
        .as_array()
        .ok_or_else(|| Error::validation("detections", "expected an array"))?;
    let mut dets = Vec::with_capacity(list.len());
    for (i, item) in list.iter().enumerate() {
        let path = format!("detections[{i}]");
        let d = item
            .as_object()
            .ok_or_else(|| Error::validation(&path, "expected an object"))?;
        let class_id = uint(d, "class_id", &format!("{path}.class_id"))?;
        let class_id = u32::try_from(class_id)
            .map_err(|_| Error::validation(format!("{path}.class_id"), "exceeds 32 bits"))?;
        let label = d
            .get("label")
            .ok_or_else(|| Error::validation(format!("{path}.label"), "missing"))?
            .as_str()
            .ok_or_else(|| Error::validation(format!("{path}.label"), "expected a string"))?;
        if label.is_empty() {
            return Err(Error::validation(format!("{path}.label"), "empty"));
        }
        let confidence = unit(d, "confidence", &format!("{path}.confidence"))?;
        let bpath = format!("{path}.bbox");
        let b = d
            .get("bbox")
            .ok_or_else(|| Error::validation(&bpath, "missing"))?
            .as_object()
            .ok_or_else(|| Error::validation(&bpath, "expected an object"))?;
        let cx = unit(b, "cx", &format!("{bpath}.cx"))?;
        let cy = unit(b, "cy", &format!("{bpath}.cy"))?;
        let w = unit(b, "w", &format!("{bpath}.w"))?;
        let h = unit(b, "h", &format!("{bpath}.h"))?;
        if w == 0.0 {
            return Err(Error::validation(format!("{bpath}.w"), "zero width"));
        }
        if h == 0.0 {
            return Err(Error::validation(format!("{bpath}.h"), "zero height"));
        }
        let nb = NormBox::new(cx, cy, w, h).map_err(|e| Error::validation(&bpath, e.to_string()))?;
        dets.push(
            WireDetection::new(class_id, label, confidence, nb)
                .map_err(|e| Error::validation(&path, e.to_string()))?,
        );
    }
    DetectionMessage::new(frame_id, timestamp, frame_w, frame_h, dets)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::validation(path, "missing"))
}

fn uint(obj: &Map<String, Value>, key: &str, path: &str) -> Result<u64> {
    field(obj, key, path)?
        .as_u64()
        .ok_or_else(|| Error::validation(path, "expected a non-negative integer"))
}

fn real(obj: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    let v = field(obj, key, path)?
        .as_f64()
        .ok_or_else(|| Error::validation(path, "expected a number"))?;
    if !v.is_finite() {
        return Err(Error::validation(path, "not finite"));
    }
    Ok(v)
}

fn unit(obj: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    let v = real(obj, key, path)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::validation(path, format!("{v} outside [0,1]")));
    }
    Ok(v)
}

fn dimension(obj: &Map<String, Value>, key: &str) -> Result<u32> {
    let v = uint(obj, key, key)?;
    match u32::try_from(v) {
        Ok(d) if d > 0 => Ok(d),
        _ => Err(Error::validation(key, format!("{v} is not a positive 32-bit size"))),
    }
}

/// Reads a JSONL log, one message per non-empty line.
pub fn read_jsonl(path: &Path) -> Result<Vec<DetectionMessage>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, None, e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| decode(l.as_bytes()).map_err(|e| Error::load(path, Some(i + 1), e.to_string())))
        .collect()
}

/// Writes messages as JSONL, one encoded message per line.
pub fn write_jsonl(path: &Path, messages: &[DetectionMessage]) -> Result<()> {
    let mut out = String::new();
    for m in messages {
        out.push_str(&encode(m));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PixelBox;
    use proptest::prelude::*;

    fn fixture() -> DetectionMessage {
        let b = NormBox::new(0.5125, 0.4375, 0.125, 0.1666666).unwrap();
        let d = WireDetection::new(0, "ball", 0.873421, b).unwrap();
        DetectionMessage::new(42, 2.1, 640, 480, vec![d]).unwrap()
    }

    const GOLDEN: &str = include_str!("../../fixtures/detection_message.json");
    const GOLDEN_EMPTY: &str = include_str!("../../fixtures/detection_message_empty.json");

    #[test]
    fn golden_encode_decode() {
        assert_eq!(encode(&fixture()), GOLDEN.trim_end());
        assert_eq!(decode(GOLDEN.as_bytes()).unwrap(), fixture());
        let empty = DetectionMessage::new(0, 0.0, 320, 240, vec![]).unwrap();
        assert_eq!(encode(&empty), GOLDEN_EMPTY.trim_end());
        assert!(encode(&empty).contains("\"detections\":[]"));
    }

    #[test]
    fn real_formatting() {
        let mut s = String::new();
        for (x, want) in [(1.0, "1.0"), (0.5, "0.5"), (0.1234567, "0.123457"), (0.0, "0.0"), (12.25, "12.25")] {
            s.clear();
            write_real(&mut s, x);
            assert_eq!(s, want);
        }
    }

    #[test]
    fn decode_errors() {
        let g = GOLDEN.trim_end();
        assert!(matches!(decode(&g.as_bytes()[..g.len() / 2]), Err(Error::Parse(_))));
        let bad = g.replace("0.873421", "1.5");
        match decode(bad.as_bytes()) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "detections[0].confidence"),
            other => panic!("{other:?}"),
        }
        let missing = g.replace("\"frame_w\":640,", "");
        match decode(missing.as_bytes()) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "frame_w"),
            other => panic!("{other:?}"),
        }
        let zero_w = g.replace("\"w\":0.125", "\"w\":0");
        assert!(matches!(decode(zero_w.as_bytes()), Err(Error::Validation { .. })));
        assert!(matches!(decode(b"[1,2]"), Err(Error::Validation { .. })));
        assert!(matches!(decode(&[0xff, 0xfe]), Err(Error::Parse(_))));
        let v2 = g.replace("\"schema_version\":1", "\"schema_version\":2");
        assert!(decode(v2.as_bytes()).is_err());
    }

    #[test]
    fn unknown_fields_ignored() {
        let extra = GOLDEN
            .trim_end()
            .replacen("{\"schema_version\"", "{\"source\":\"cam0\",\"schema_version\"", 1)
            .replace("\"label\":\"ball\"", "\"label\":\"ball\",\"track\":7");
        assert_eq!(decode(extra.as_bytes()).unwrap(), fixture());
    }

    #[test]
    fn set_conversion() {
        let meta = FrameMeta::new(9, 1.5, 640, 480).unwrap();
        let b = PixelBox::new(160.0, 120.0, 480.0, 360.0).unwrap();
        let set = DetectionSet::new(meta, vec![Detection::new(1, "basket", 0.75, b, 9).unwrap()]).unwrap();
        let m = DetectionMessage::from_set(&set).unwrap();
        assert_eq!(m.detections()[0].bbox(), &NormBox::new(0.5, 0.5, 0.5, 0.5).unwrap());
        assert_eq!(m.to_set().unwrap(), set);
        let classes = ClassMap::for_event(crate::types::Event::Basketball);
        m.check_classes(&classes).unwrap();
        assert!(m.check_classes(&ClassMap::for_event(crate::types::Event::Archery)).is_err());
    }

    fn arb_message() -> impl Strategy<Value = DetectionMessage> {
        let det = (0u32..8, "[a-z_]{1,12}", 0u32..=1_000_000, 1u32..999_999, 1u32..999_999, 1u32..=1_000_000, 1u32..=1_000_000)
            .prop_map(|(c, label, conf, cx, cy, w, h)| {
                let b = NormBox::new(cx as f64 / 1e6, cy as f64 / 1e6, w as f64 / 1e6, h as f64 / 1e6).unwrap();
                WireDetection::new(c, label, conf as f64 / 1e6, b).unwrap()
            });
        (any::<u64>(), 0u64..10_000_000_000, 1u32..8000, 1u32..8000, prop::collection::vec(det, 0..6))
            .prop_map(|(id, ts, w, h, dets)| DetectionMessage::new(id, ts as f64 / 1e6, w, h, dets).unwrap())
    }

    proptest! {
        #[test]
        fn encode_decode_identity(m in arb_message()) {
            let text = encode(&m);
            prop_assert_eq!(decode(text.as_bytes()).unwrap(), m.clone());
            // and the encoding is a fixed point
            prop_assert_eq!(encode(&decode(text.as_bytes()).unwrap()), text);
        }

        #[test]
        fn arbitrary_values_quantize_to_six_digits(conf in 0.0f64..=1.0, ts in 0.0f64..1e5) {
            let b = NormBox::new(0.5, 0.5, 0.25, 0.25).unwrap();
            let m = DetectionMessage::new(1, ts, 10, 10, vec![WireDetection::new(0, "x", conf, b).unwrap()]).unwrap();
            let back = decode(encode(&m).as_bytes()).unwrap();
            prop_assert!((back.detections()[0].confidence() - conf).abs() <= 5e-7 + 1e-15);
            prop_assert!((back.timestamp() - ts).abs() <= 5e-7 + 1e-9);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode(&bytes);
        }
    }
}
