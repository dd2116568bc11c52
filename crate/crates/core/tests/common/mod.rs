//! Reference implementations and fixture builders shared by the integration
//! tests. Nothing here calls into the code under test for the quantity it
//! checks.
#![allow(dead_code)]

use std::path::Path;

use hurovision::bridge::DetectionMessage;
use hurovision::evaluation::{GtBox, ImageEval, PredBox};
use hurovision::preprocess::Image;
use hurovision::{ClassMap, Detection, FrameMeta, PixelBox};
use rand::rngs::StdRng;
use rand::Rng;

pub fn pb(x1: f64, y1: f64, x2: f64, y2: f64) -> PixelBox {
    PixelBox::new(x1, y1, x2, y2).unwrap()
}

/// Overlap ratio from the intersection rectangle's corners.
pub fn ref_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let left = a.x1().max(b.x1());
    let right = a.x2().min(b.x2());
    let top = a.y1().max(b.y1());
    let bottom = a.y2().min(b.y2());
    if right <= left || bottom <= top {
        return 0.0;
    }
    let inter = (right - left) * (bottom - top);
    let area = |p: &PixelBox| (p.x2() - p.x1()) * (p.y2() - p.y1());
    inter / (area(a) + area(b) - inter)
}

/// Textbook NMS: repeatedly emit the best remaining box and delete every
/// remaining box of its class that overlaps it by more than `iou_t`.
/// Returns input indices in emission order.
pub fn ref_nms(dets: &[Detection], iou_t: f64, per_class: bool) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (i, j) = (remaining[k], remaining[best]);
            if dets[i].confidence() > dets[j].confidence() {
                best = k;
            }
        }
        let top = remaining.remove(best);
        out.push(top);
        remaining.retain(|&i| {
            let same = !per_class || dets[i].class_id == dets[top].class_id;
            !(same && ref_iou(&dets[i].bbox, &dets[top].bbox) > iou_t)
        });
    }
    out
}

pub fn random_box(rng: &mut StdRng, w: f64, h: f64) -> PixelBox {
    let bw = rng.gen_range(1.0..w / 2.0);
    let bh = rng.gen_range(1.0..h / 2.0);
    let x = rng.gen_range(0.0..w - bw);
    let y = rng.gen_range(0.0..h - bh);
    pb(x, y, x + bw, y + bh)
}

/// Box near `b`, shifted and scaled by up to `amount` of its size.
pub fn jitter(rng: &mut StdRng, b: &PixelBox, amount: f64) -> PixelBox {
    let (w, h) = (b.width(), b.height());
    let dx = rng.gen_range(-amount..=amount) * w;
    let dy = rng.gen_range(-amount..=amount) * h;
    let sw = 1.0 + rng.gen_range(-amount..=amount);
    let sh = 1.0 + rng.gen_range(-amount..=amount);
    let (cx, cy) = b.center();
    let (nw, nh) = ((w * sw).max(0.5), (h * sh).max(0.5));
    pb(cx + dx - nw / 2.0, cy + dy - nh / 2.0, cx + dx + nw / 2.0, cy + dy + nh / 2.0)
}

/// Random detection set of up to `max_boxes` boxes over `classes` classes,
/// clustered so that suppression actually happens. Confidences come from a
/// coarse grid to force ties.
pub fn random_detections(rng: &mut StdRng, max_boxes: usize, classes: u32) -> (FrameMeta, Vec<Detection>) {
    let meta = FrameMeta::new(7, 0.0, 400, 300).unwrap();
    let n = rng.gen_range(0..=max_boxes);
    let seeds: Vec<PixelBox> = (0..3).map(|_| random_box(rng, 400.0, 300.0)).collect();
    let dets = (0..n)
        .map(|_| {
            let b = if rng.gen_bool(0.7) {
                let s = &seeds[rng.gen_range(0..seeds.len())];
                jitter(rng, s, 0.3).clamp_to(400.0, 300.0).unwrap()
            } else {
                random_box(rng, 400.0, 300.0)
            };
            let c = rng.gen_range(0..classes);
            let conf = rng.gen_range(1..=20) as f64 / 20.0;
            Detection::new(c, format!("c{c}"), conf, b, 7).unwrap()
        })
        .collect();
    (meta, dets)
}

/// Exhaustive matcher: tries every injective partial assignment of
/// predictions to same-class ground truths with IoU at least `iou_t`, and
/// keeps the one whose per-prediction sequence of `(matched, iou, -gt index)`,
/// taken in confidence order, is lexicographically largest.
/// Returns, per prediction, the matched ground-truth index.
pub fn ref_match(preds: &[PredBox], gts: &[GtBox], iou_t: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap()
            .then(a.cmp(&b))
    });
    let ious: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| ref_iou(&p.bbox, &g.bbox)).collect())
        .collect();

    type Key = Vec<(u8, f64, i64)>;
    struct Search<'a> {
        order: &'a [usize],
        preds: &'a [PredBox],
        gts: &'a [GtBox],
        ious: &'a [Vec<f64>],
        iou_t: f64,
        used: Vec<bool>,
        current: Vec<Option<usize>>,
        best: Option<(Key, Vec<Option<usize>>)>,
    }
    impl Search<'_> {
        fn key(&self) -> Key {
            self.order
                .iter()
                .map(|&i| match self.current[i] {
                    Some(j) => (1, self.ious[i][j], -(j as i64)),
                    None => (0, 0.0, 0),
                })
                .collect()
        }
        fn run(&mut self, depth: usize) {
            if depth == self.order.len() {
                let k = self.key();
                let better = match &self.best {
                    None => true,
                    Some((bk, _)) => k.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
                };
                if better {
                    self.best = Some((k, self.current.clone()));
                }
                return;
            }
            let i = self.order[depth];
            self.current[i] = None;
            self.run(depth + 1);
            for j in 0..self.gts.len() {
                if self.used[j]
                    || self.gts[j].class_id != self.preds[i].class_id
                    || self.ious[i][j] < self.iou_t
                {
                    continue;
                }
                self.used[j] = true;
                self.current[i] = Some(j);
                self.run(depth + 1);
                self.current[i] = None;
                self.used[j] = false;
            }
        }
    }
    let mut s = Search {
        order: &order,
        preds,
        gts,
        ious: &ious,
        iou_t,
        used: vec![false; gts.len()],
        current: vec![None; preds.len()],
        best: None,
    };
    s.run(0);
    s.best.map(|(_, a)| a).unwrap_or_default()
}

/// 101-point interpolated AP of one class, evaluated point by point: at each
/// recall level the interpolated precision is the largest precision over
/// every ranked prefix reaching that recall. `None` without ground truth.
pub fn ref_ap(images: &[ImageEval], class_id: u32, iou_t: f64) -> Option<f64> {
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for (ii, img) in images.iter().enumerate() {
        n_gt += img.gts.iter().filter(|g| g.class_id == class_id).count();
        let m = ref_match(&img.preds, &img.gts, iou_t);
        for (pi, p) in img.preds.iter().enumerate() {
            if p.class_id == class_id {
                ranked.push((p.confidence, ii, pi, m[pi].is_some()));
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    let points: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = ranked[..k].iter().filter(|r| r.3).count() as f64;
            (tp / n_gt as f64, tp / k as f64)
        })
        .collect();
    let total: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            points
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / 101.0)
}

/// Small random dataset: up to 10 images, up to 5 ground truths each, with
/// predictions that are mostly perturbed ground truths plus some clutter.
pub fn random_dataset(rng: &mut StdRng, classes: u32) -> Vec<ImageEval> {
    let n_img = rng.gen_range(1..=10);
    (0..n_img)
        .map(|_| {
            let n_gt = rng.gen_range(0..=5);
            let gts: Vec<GtBox> = (0..n_gt)
                .map(|_| GtBox {
                    class_id: rng.gen_range(0..classes),
                    bbox: random_box(rng, 200.0, 200.0),
                })
                .collect();
            let mut preds = Vec::new();
            for g in &gts {
                if rng.gen_bool(0.8) {
                    let class_id = if rng.gen_bool(0.85) { g.class_id } else { rng.gen_range(0..classes) };
                    preds.push(PredBox {
                        class_id,
                        confidence: rng.gen_range(1..=10) as f64 / 10.0,
                        bbox: jitter(rng, &g.bbox, 0.2),
                    });
                }
            }
            for _ in 0..rng.gen_range(0..=2) {
                preds.push(PredBox {
                    class_id: rng.gen_range(0..classes),
                    confidence: rng.gen_range(1..=10) as f64 / 10.0,
                    bbox: random_box(rng, 200.0, 200.0),
                });
            }
            ImageEval { gts, preds }
        })
        .collect()
}

pub const GRASS: [u8; 3] = [30, 130, 40];
pub const ORANGE: [u8; 3] = [255, 140, 0];
pub const BLUE: [u8; 3] = [20, 60, 220];

/// Writes `count` 320×240 frames, each with an orange disk, plus YOLO labels
/// and `classes.txt` for the basketball class map. Returns the disk centers.
pub fn write_disk_dataset(dir: &Path, count: usize, rng: &mut StdRng) -> Vec<(f64, f64, f64)> {
    use hurovision::synth::fill_disk;
    std::fs::create_dir_all(dir).unwrap();
    let classes = ClassMap::for_event(hurovision::Event::Basketball);
    std::fs::write(dir.join("classes.txt"), classes.labels().join("\n") + "\n").unwrap();
    let (w, h) = (320.0, 240.0);
    (0..count)
        .map(|i| {
            let r = rng.gen_range(14.0..30.0);
            let cx = rng.gen_range(r + 2.0..w - r - 2.0);
            let cy = rng.gen_range(r + 2.0..h - r - 2.0);
            let mut img = Image::filled(w as u32, h as u32, GRASS).unwrap();
            fill_disk(&mut img, cx, cy, r, ORANGE);
            img.save(&dir.join(format!("f{i:04}.png"))).unwrap();
            std::fs::write(
                dir.join(format!("f{i:04}.txt")),
                format!("0 {} {} {} {}\n", cx / w, cy / h, 2.0 * r / w, 2.0 * r / h),
            )
            .unwrap();
            (cx, cy, r)
        })
        .collect()
}

/// Deterministic scripted log: one message per frame id, two detections each.
pub fn script_messages(frames: u64, width: u32, height: u32) -> Vec<DetectionMessage> {
    let classes = ClassMap::for_event(hurovision::Event::Basketball);
    (0..frames)
        .map(|f| {
            let meta = FrameMeta::new(f, f as f64 / 30.0, width, height).unwrap();
            let x = (f % 10) as f64 * 2.0;
            let dets = vec![
                Detection::with_class_map(&classes, 0, 0.9, pb(x, 1.0, x + 10.0, 11.0), f).unwrap(),
                Detection::with_class_map(&classes, 1, 0.6, pb(30.0, 20.0, 50.0, 40.0), f).unwrap(),
            ];
            let set = hurovision::DetectionSet::new(meta, dets).unwrap();
            DetectionMessage::from_set(&set).unwrap()
        })
        .collect()
}
