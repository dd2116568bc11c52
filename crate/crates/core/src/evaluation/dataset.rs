//! Ground-truth directories and prediction logs.
//!
//! A ground-truth directory holds images, one `<stem>.txt` label file per
//! annotated image with lines `class_id cx cy w h` (normalized), and a
//! `classes.txt` listing labels by id. Images without a label file have no
//! objects.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use crate::bridge::{read_jsonl, DetectionMessage, WireDetection};
use crate::error::{Error, Result};
use crate::source::list_images;
use crate::types::{norm_to_pixel, ClassMap, NormBox};

use super::{GtBox, PredBox};

pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub class_id: u32,
    pub bbox: NormBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtImage {
    /// Position in the sorted image list; also the frame id of the image.
    pub frame_id: u64,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GtObject>,
}

impl GtImage {
    pub fn pixel_boxes(&self) -> Result<Vec<GtBox>> {
        self.objects
            .iter()
            .map(|o| {
                Ok(GtBox {
                    class_id: o.class_id,
                    bbox: norm_to_pixel(&o.bbox, self.width, self.height)?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    class_map: ClassMap,
    images: Vec<GtImage>,
}

/// Parses one label line `class_id cx cy w h`.
pub fn parse_label_line(line: &str, classes: &ClassMap) -> std::result::Result<GtObject, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields \"class_id cx cy w h\", found {}", fields.len()));
    }
    let class_id: u32 = fields[0]
        .parse()
        .map_err(|_| format!("class id {:?} is not a non-negative integer", fields[0]))?;
    if classes.label(class_id).is_none() {
        return Err(format!("class id {class_id} not in classes ({} labels)", classes.len()));
    }
    let mut v = [0.0; 4];
    for (slot, f) in v.iter_mut().zip(&fields[1..]) {
        *slot = f.parse().map_err(|_| format!("{f:?} is not a number"))?;
    }
    let bbox = NormBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())?;
    Ok(GtObject { class_id, bbox })
}

/// Reads `classes.txt`: one label per non-empty line, id = line order.
pub fn load_classes(path: &Path) -> Result<ClassMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, None, e.to_string()))?;
    let labels: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    ClassMap::new(labels).map_err(|e| Error::load(path, None, e.to_string()))
}

impl GroundTruthSet {
    pub fn new(class_map: ClassMap, images: Vec<GtImage>) -> Result<Self> {
        for (i, img) in images.iter().enumerate() {
            if img.frame_id != i as u64 {
                return Err(Error::InvalidArgument(format!(
                    "image {i} has frame id {}",
                    img.frame_id
                )));
            }
            if let Some(o) = img.objects.iter().find(|o| class_map.label(o.class_id).is_none()) {
                return Err(Error::InvalidArgument(format!(
                    "{}: class id {} not in class map",
                    img.path.display(),
                    o.class_id
                )));
            }
        }
        Ok(Self { class_map, images })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let class_map = load_classes(&dir.join(CLASSES_FILE))?;
        let image_paths = list_images(dir)?;
        let mut by_stem: HashMap<String, usize> = HashMap::new();
        for (i, p) in image_paths.iter().enumerate() {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if by_stem.insert(stem.clone(), i).is_some() {
                return Err(Error::load(p, None, format!("two images share the stem {stem:?}")));
            }
        }
        let mut objects: BTreeMap<usize, Vec<GtObject>> = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::load(dir, None, e.to_string()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for label_path in entries {
            let is_label = label_path.extension().is_some_and(|e| e == "txt")
                && label_path.file_name().is_some_and(|n| n != CLASSES_FILE)
                && label_path.is_file();
            if !is_label {
                continue;
            }
            let stem = label_path.file_stem().unwrap_or_default().to_string_lossy();
            let Some(&idx) = by_stem.get(stem.as_ref()) else {
                return Err(Error::load(&label_path, None, "label file has no matching image"));
            };
            let text = std::fs::read_to_string(&label_path)
                .map_err(|e| Error::load(&label_path, None, e.to_string()))?;
            let mut objs = Vec::new();
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let o = parse_label_line(line, &class_map)
                    .map_err(|reason| Error::load(&label_path, Some(n + 1), reason))?;
                objs.push(o);
            }
            objects.insert(idx, objs);
        }
        let mut images = Vec::with_capacity(image_paths.len());
        for (i, path) in image_paths.into_iter().enumerate() {
            let (width, height) =
                image::image_dimensions(&path).map_err(|e| Error::load(&path, None, e.to_string()))?;
            images.push(GtImage {
                frame_id: i as u64,
                path,
                width,
                height,
                objects: objects.remove(&i).unwrap_or_default(),
            });
        }
        Self::new(class_map, images)
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn images(&self) -> &[GtImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn object_count(&self) -> usize {
        self.images.iter().map(|i| i.objects.len()).sum()
    }

    /// The ground truth as a prediction log with confidence 1.
    pub fn as_messages(&self) -> Result<Vec<DetectionMessage>> {
        self.images
            .iter()
            .map(|img| {
                let dets = img
                    .objects
                    .iter()
                    .map(|o| {
                        let label = self.class_map.label(o.class_id).expect("validated");
                        WireDetection::new(o.class_id, label, 1.0, o.bbox)
                    })
                    .collect::<Result<Vec<_>>>()?;
                DetectionMessage::new(img.frame_id, 0.0, img.width, img.height, dets)
            })
            .collect()
    }
}

/// Writes a ground-truth directory: label files plus `classes.txt`. Images
/// are expected to be saved by the caller under the same stems.
pub fn write_labels(dir: &Path, class_map: &ClassMap, labels: &[(String, Vec<GtObject>)]) -> Result<()> {
    let mut classes = class_map.labels().join("\n");
    classes.push('\n');
    std::fs::write(dir.join(CLASSES_FILE), classes)?;
    for (stem, objs) in labels {
        let mut text = String::new();
        for o in objs {
            text.push_str(&format!(
                "{} {} {} {} {}\n",
                o.class_id,
                o.bbox.cx(),
                o.bbox.cy(),
                o.bbox.w(),
                o.bbox.h()
            ));
        }
        std::fs::write(dir.join(format!("{stem}.txt")), text)?;
    }
    Ok(())
}

/// Prediction log keyed by frame id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionLog {
    by_frame: BTreeMap<u64, DetectionMessage>,
}

impl PredictionLog {
    pub fn new(messages: Vec<DetectionMessage>) -> Result<Self> {
        let mut by_frame = BTreeMap::new();
        for m in messages {
            let id = m.frame_id();
            if by_frame.insert(id, m).is_some() {
                return Err(Error::Config(format!("frame {id} appears twice in the prediction log")));
            }
        }
        Ok(Self { by_frame })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let log = Self::new(read_jsonl(path)?)?;
        Ok(log)
    }

    pub fn get(&self, frame_id: u64) -> Option<&DetectionMessage> {
        self.by_frame.get(&frame_id)
    }

    pub fn len(&self) -> usize {
        self.by_frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_frame.is_empty()
    }

    pub fn messages(&self) -> impl Iterator<Item = &DetectionMessage> {
        self.by_frame.values()
    }

    /// Checks every frame id resolves against `gt` and every class pair
    /// exists in its class map.
    pub fn check_against(&self, gt: &GroundTruthSet) -> Result<()> {
        for m in self.by_frame.values() {
            if m.frame_id() as usize >= gt.len() {
                return Err(Error::Config(format!(
                    "prediction for frame {} but the ground truth has {} images",
                    m.frame_id(),
                    gt.len()
                )));
            }
            m.check_classes(gt.class_map())
                .map_err(|e| Error::Config(format!("frame {}: {e}", m.frame_id())))?;
        }
        Ok(())
    }

    /// Pixel-space predictions for one ground-truth image.
    pub fn pred_boxes(&self, img: &GtImage) -> Result<Vec<PredBox>> {
        let Some(m) = self.get(img.frame_id) else {
            return Ok(Vec::new());
        };
        m.detections()
            .iter()
            .map(|d| {
                Ok(PredBox {
                    class_id: d.class_id(),
                    confidence: d.confidence(),
                    bbox: norm_to_pixel(d.bbox(), img.width, img.height)?,
                })
            })
            .collect()
    }
}
