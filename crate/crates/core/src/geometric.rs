//! Classical color-segmentation detector.
//!
//! Frames are thresholded in HSV (a class may carry several ranges whose masks
//! are united, e.g. one for lit and one for shaded surfaces), 8-connected
//! components are traced, and per-class shape rules turn contours into
//! detections. Thresholds come from a per-event profile file.

use std::collections::VecDeque;
use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::preprocess::Image;
use crate::types::{ClassMap, Detection, Event, PixelBox};

/// Returns hue in degrees `[0,360)`, saturation and value in `[0,1]`.
/// Hue is 0 for grays.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (if h < 0.0 { h + 360.0 } else { h }, s, v)
}

/// Inclusive HSV box. `h_lo > h_hi` denotes a hue interval wrapping through 0°.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "RangeSpec")]
pub struct HsvRange {
    pub h_lo: f64,
    pub h_hi: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeSpec {
    h: [f64; 2],
    s: [f64; 2],
    v: [f64; 2],
}

impl TryFrom<RangeSpec> for HsvRange {
    type Error = Error;

    fn try_from(r: RangeSpec) -> Result<Self> {
        HsvRange::new(r.h[0], r.h[1], r.s[0], r.s[1], r.v[0], r.v[1])
    }
}

impl HsvRange {
    pub fn new(h_lo: f64, h_hi: f64, s_lo: f64, s_hi: f64, v_lo: f64, v_hi: f64) -> Result<Self> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(0.0..=360.0).contains(&h_lo) || !(0.0..=360.0).contains(&h_hi) {
            return Err(Error::Config(format!("hue bounds {h_lo}..{h_hi} outside [0,360]")));
        }
        if !(unit(s_lo) && unit(s_hi) && s_lo <= s_hi) {
            return Err(Error::Config(format!("saturation bounds {s_lo}..{s_hi}")));
        }
        if !(unit(v_lo) && unit(v_hi) && v_lo <= v_hi) {
            return Err(Error::Config(format!("value bounds {v_lo}..{v_hi}")));
        }
        Ok(Self {
            h_lo,
            h_hi,
            s_lo,
            s_hi,
            v_lo,
            v_hi,
        })
    }

    /// Accepts every color.
    pub fn full() -> Self {
        Self::new(0.0, 360.0, 0.0, 1.0, 0.0, 1.0).unwrap()
    }

    pub fn contains(&self, h: f64, s: f64, v: f64) -> bool {
        let hue_ok = if self.h_lo <= self.h_hi {
            h >= self.h_lo && h <= self.h_hi
        } else {
            h >= self.h_lo || h <= self.h_hi
        };
        hue_ok && s >= self.s_lo && s <= self.s_hi && v >= self.v_lo && v <= self.v_hi
    }
}

/// Binary image, one flag per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    #[inline]
    fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 && self.get(x as u32, y as u32)
    }
}

/// Pixels whose HSV lies in any of `ranges`.
pub fn segment(img: &Image, ranges: &[HsvRange]) -> Mask {
    let mut mask = Mask::new(img.width(), img.height());
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let (h, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
        mask.bits[i] = ranges.iter().any(|r| r.contains(h, s, v));
    }
    mask
}

/// One 8-connected component of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    /// Outer boundary pixels in tracing order (clockwise in image coordinates).
    pub boundary: Vec<(u32, u32)>,
    /// Every pixel of the component.
    pub pixels: Vec<(u32, u32)>,
    /// Pixel count.
    pub area: f64,
    /// Chain-code length of the boundary: 1 per axial step, √2 per diagonal.
    pub perimeter: f64,
    /// Mean of pixel centers.
    pub centroid: (f64, f64),
    /// Smallest box covering every pixel square.
    pub bbox: PixelBox,
}

impl Contour {
    /// 4πA/P²; 0 for single-pixel or line-thin components with no enclosed length.
    pub fn circularity(&self) -> f64 {
        if self.perimeter <= 0.0 {
            return 0.0;
        }
        4.0 * PI * self.area / (self.perimeter * self.perimeter)
    }

    /// Area over bounding-box area.
    pub fn extent(&self) -> f64 {
        self.area / self.bbox.area()
    }
}

// Clockwise from west, y pointing down.
const NEIGHBORS: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// One contour per 8-connected component, in raster order of each component's
/// first pixel. Pixels beyond the image border count as background.
pub fn find_contours(mask: &Mask) -> Vec<Contour> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.bits[i] || seen[i] {
                continue;
            }
            let mut pixels = Vec::new();
            let mut queue = VecDeque::from([(x as u32, y as u32)]);
            seen[i] = true;
            while let Some((px, py)) = queue.pop_front() {
                pixels.push((px, py));
                for (dx, dy) in NEIGHBORS {
                    let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                    if mask.get_signed(nx, ny) {
                        let j = ny as usize * w + nx as usize;
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back((nx as u32, ny as u32));
                        }
                    }
                }
            }
            out.push(build_contour(mask, (x as u32, y as u32), pixels));
        }
    }
    out
}

fn build_contour(mask: &Mask, start: (u32, u32), pixels: Vec<(u32, u32)>) -> Contour {
    let boundary = trace_boundary(mask, start, pixels.len());
    let perimeter = chain_length(&boundary);
    let area = pixels.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0, 0);
    for &(x, y) in &pixels {
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        x1 = x1.min(x);
        y1 = y1.min(y);
        x2 = x2.max(x);
        y2 = y2.max(y);
    }
    let bbox = PixelBox::new(x1 as f64, y1 as f64, x2 as f64 + 1.0, y2 as f64 + 1.0)
        .expect("non-empty component has positive extent");
    Contour {
        boundary,
        centroid: (sx / area, sy / area),
        pixels,
        area,
        perimeter,
        bbox,
    }
}

/// Moore-neighbor tracing. `start` is the first pixel of the component in
/// raster order, so its west neighbor is background.
fn trace_boundary(mask: &Mask, start: (u32, u32), component_size: usize) -> Vec<(u32, u32)> {
    let s = (start.0 as i64, start.1 as i64);
    let mut boundary = vec![start];
    // index into NEIGHBORS of the backtrack pixel relative to the current one
    let mut back = 0usize;
    let mut cur = s;
    let mut first_step: Option<(i64, i64)> = None;
    let limit = 4 * component_size + 8;
    for _ in 0..limit {
        let mut next = None;
        for k in 1..=8 {
            let idx = (back + k) % 8;
            let (dx, dy) = NEIGHBORS[idx];
            let cand = (cur.0 + dx, cur.1 + dy);
            if mask.get_signed(cand.0, cand.1) {
                // previous probe (background) becomes the backtrack, expressed relative to cand
                let (bx, by) = NEIGHBORS[(idx + 7) % 8];
                let bpos = (cur.0 + bx, cur.1 + by);
                let rel = (bpos.0 - cand.0, bpos.1 - cand.1);
                back = NEIGHBORS.iter().position(|&d| d == rel).expect("backtrack is adjacent");
                next = Some(cand);
                break;
            }
        }
        let Some(n) = next else {
            break; // isolated pixel
        };
        if cur == s {
            match first_step {
                None => first_step = Some(n),
                Some(f) if f == n => break,
                Some(_) => {}
            }
        }
        cur = n;
        boundary.push((n.0 as u32, n.1 as u32));
    }
    // the closing return to the start pixel is implicit
    if boundary.len() > 1 && boundary.last() == Some(&start) {
        boundary.pop();
    }
    boundary
}

fn chain_length(boundary: &[(u32, u32)]) -> f64 {
    if boundary.len() < 2 {
        return 0.0;
    }
    let step = |a: (u32, u32), b: (u32, u32)| {
        let diag = a.0 != b.0 && a.1 != b.1;
        if diag {
            SQRT_2
        } else {
            1.0
        }
    };
    let mut len: f64 = boundary.windows(2).map(|w| step(w[0], w[1])).sum();
    len += step(*boundary.last().unwrap(), boundary[0]);
    len
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrowDirection {
    Left,
    Right,
    Forward,
}

impl ArrowDirection {
    pub fn mirrored(self) -> Self {
        match self {
            ArrowDirection::Left => ArrowDirection::Right,
            ArrowDirection::Right => ArrowDirection::Left,
            ArrowDirection::Forward => ArrowDirection::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrowReading {
    pub direction: ArrowDirection,
    /// `1 - tip_slab_area / tail_slab_area`, in `(0,1]`.
    pub asymmetry: f64,
}

/// Fraction of the axis extent examined at each end.
const ARROW_END_SLAB: f64 = 0.15;
/// Minimum `(λ1-λ2)/(λ1+λ2)` for the principal axis to be meaningful.
const MIN_ELONGATION: f64 = 0.05;
const MIN_ASYMMETRY: f64 = 0.05;

/// Reads an arrow marker's direction from its pixel distribution.
///
/// The principal axis of the second moments gives the orientation. The tip is
/// the axis end whose outermost slab holds less area. Tips within 45° of
/// straight up read as forward; otherwise the tip's horizontal side decides.
pub fn classify_arrow(c: &Contour) -> Result<ArrowReading> {
    if c.pixels.len() < 3 {
        return Err(Error::AmbiguousShape("contour too small".into()));
    }
    let (mx, my) = c.centroid;
    let n = c.area;
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for &(x, y) in &c.pixels {
        let dx = x as f64 + 0.5 - mx;
        let dy = y as f64 + 0.5 - my;
        m20 += dx * dx;
        m02 += dy * dy;
        m11 += dx * dy;
    }
    m20 /= n;
    m02 /= n;
    m11 /= n;
    let spread = ((m20 - m02).powi(2) + 4.0 * m11 * m11).sqrt();
    let trace = m20 + m02;
    if trace <= 0.0 || spread / trace < MIN_ELONGATION {
        return Err(Error::AmbiguousShape(
            "no dominant axis (circularly symmetric contour)".into(),
        ));
    }
    let theta = 0.5 * (2.0 * m11).atan2(m20 - m02);
    let (ux, uy) = (theta.cos(), theta.sin());
    let proj: Vec<f64> = c
        .pixels
        .iter()
        .map(|&(x, y)| (x as f64 + 0.5 - mx) * ux + (y as f64 + 0.5 - my) * uy)
        .collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slab = ARROW_END_SLAB * (hi - lo);
    let plus = proj.iter().filter(|&&t| t >= hi - slab).count() as f64;
    let minus = proj.iter().filter(|&&t| t <= lo + slab).count() as f64;
    let (tip, tail, sign) = if plus < minus {
        (plus, minus, 1.0)
    } else {
        (minus, plus, -1.0)
    };
    let asymmetry = 1.0 - tip / tail;
    if asymmetry < MIN_ASYMMETRY {
        return Err(Error::AmbiguousShape(format!(
            "axis ends carry near-equal area ({plus} vs {minus})"
        )));
    }
    let (dx, dy) = (sign * ux, sign * uy);
    let direction = if -dy >= std::f64::consts::FRAC_1_SQRT_2 {
        ArrowDirection::Forward
    } else if dy >= std::f64::consts::FRAC_1_SQRT_2 {
        return Err(Error::AmbiguousShape("arrow points backwards".into()));
    } else if dx > 0.0 {
        ArrowDirection::Right
    } else {
        ArrowDirection::Left
    };
    Ok(ArrowReading {
        direction,
        asymmetry,
    })
}

/// Shape rule selecting which contours of a class become detections.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ShapeRule {
    /// Largest contour whose circularity lies within the bounds.
    Round { circularity: [f64; 2] },
    /// Largest contour whose extent (area / box area) reaches `min_extent`.
    Blob { min_extent: f64 },
    /// Every contour read by [`classify_arrow`] as `direction`.
    Arrow { direction: ArrowDirection },
    /// Mask in the lower third of the frame.
    Line,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ClassRule {
    pub label: String,
    pub min_area: f64,
    pub ranges: Vec<HsvRange>,
    #[serde(flatten)]
    pub rule: ShapeRule,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    event: Event,
    #[serde(rename = "class")]
    classes: Vec<ClassRule>,
}

/// Per-event calibration: color ranges and shape rules per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoProfile {
    event: Event,
    class_map: ClassMap,
    rules: Vec<(u32, ClassRule)>,
}

impl GeoProfile {
    pub fn new(event: Event, rules: Vec<ClassRule>) -> Result<Self> {
        let class_map = ClassMap::for_event(event);
        let mut out = Vec::with_capacity(rules.len());
        for rule in rules {
            let id = class_map.id_of(&rule.label).ok_or_else(|| {
                Error::Config(format!(
                    "class {:?} is not part of the {} class map",
                    rule.label,
                    event.name()
                ))
            })?;
            if out.iter().any(|(i, _)| *i == id) {
                return Err(Error::Config(format!("class {:?} configured twice", rule.label)));
            }
            if rule.min_area.is_nan() || rule.min_area <= 0.0 {
                return Err(Error::Config(format!("{}: min_area must be > 0", rule.label)));
            }
            if rule.ranges.is_empty() {
                return Err(Error::Config(format!("{}: at least one range required", rule.label)));
            }
            if let ShapeRule::Round { circularity: [lo, hi] } = rule.rule {
                if !(lo >= 0.0 && lo <= hi) {
                    return Err(Error::Config(format!("{}: circularity bounds", rule.label)));
                }
            }
            out.push((id, rule));
        }
        Ok(Self {
            event,
            class_map,
            rules: out,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ProfileFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("profile: {e}")))?;
        Self::new(file.event, file.classes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Calibration shipped with the crate for synthetic fixtures.
    pub fn builtin(event: Event) -> Self {
        let text = match event {
            Event::Basketball => include_str!("../profiles/basketball.toml"),
            Event::Archery => include_str!("../profiles/archery.toml"),
            Event::Marathon => include_str!("../profiles/marathon.toml"),
        };
        Self::parse(text).expect("bundled profiles parse")
    }

    pub fn event(&self) -> Event {
        self.event
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn rule(&self, class_id: u32) -> Option<&ClassRule> {
        self.rules.iter().find(|(i, _)| *i == class_id).map(|(_, r)| r)
    }

    pub fn rules(&self) -> impl Iterator<Item = (u32, &ClassRule)> {
        self.rules.iter().map(|(i, r)| (*i, r))
    }
}

/// Largest round contour of `class_id`, scored by its circularity.
/// The returned detection has `frame_id` 0.
pub fn detect_round(img: &Image, profile: &GeoProfile, class_id: u32) -> Option<Detection> {
    let rule = profile.rule(class_id)?;
    let (lo, hi) = match rule.rule {
        ShapeRule::Round { circularity } => (circularity[0], circularity[1]),
        _ => return None,
    };
    let best = find_contours(&segment(img, &rule.ranges))
        .into_iter()
        .filter(|c| c.area >= rule.min_area)
        .filter(|c| (lo..=hi).contains(&c.circularity()))
        .max_by(|a, b| a.area.total_cmp(&b.area))?;
    let conf = best.circularity().clamp(0.0, 1.0);
    Detection::with_class_map(profile.class_map(), class_id, conf, best.bbox, 0).ok()
}

/// Largest contour of a blob class with sufficient extent.
pub fn detect_blob(img: &Image, profile: &GeoProfile, class_id: u32) -> Option<Detection> {
    let rule = profile.rule(class_id)?;
    let ShapeRule::Blob { min_extent } = rule.rule else {
        return None;
    };
    let best = find_contours(&segment(img, &rule.ranges))
        .into_iter()
        .filter(|c| c.area >= rule.min_area && c.extent() >= min_extent)
        .max_by(|a, b| a.area.total_cmp(&b.area))?;
    Detection::with_class_map(profile.class_map(), class_id, best.extent().clamp(0.0, 1.0), best.bbox, 0).ok()
}

/// All contours of arrow-colored pixels read with the requested direction.
pub fn detect_arrows(img: &Image, profile: &GeoProfile, class_id: u32) -> Vec<Detection> {
    let Some(rule) = profile.rule(class_id) else {
        return Vec::new();
    };
    let ShapeRule::Arrow { direction } = rule.rule else {
        return Vec::new();
    };
    find_contours(&segment(img, &rule.ranges))
        .into_iter()
        .filter(|c| c.area >= rule.min_area)
        .filter_map(|c| {
            let reading = classify_arrow(&c).ok()?;
            (reading.direction == direction).then(|| {
                Detection::with_class_map(profile.class_map(), class_id, reading.asymmetry, c.bbox, 0)
                    .ok()
            })?
        })
        .collect()
}

struct LineMask {
    offset: f64,
    bbox: PixelBox,
    extent: f64,
}

fn line_mask(img: &Image, profile: &GeoProfile) -> Option<(u32, LineMask)> {
    let (class_id, rule) = profile.rules().find(|(_, r)| r.rule == ShapeRule::Line)?;
    let mask = segment(img, &rule.ranges);
    let (w, h) = (img.width(), img.height());
    let top = 2 * h / 3;
    let (mut n, mut sx) = (0usize, 0.0);
    let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0, 0);
    for y in top..h {
        for x in 0..w {
            if mask.get(x, y) {
                n += 1;
                sx += x as f64 + 0.5;
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x);
                y2 = y2.max(y);
            }
        }
    }
    if n == 0 || (n as f64) < rule.min_area {
        return None;
    }
    let half = w as f64 / 2.0;
    let bbox = PixelBox::new(x1 as f64, y1 as f64, x2 as f64 + 1.0, y2 as f64 + 1.0).ok()?;
    let extent = n as f64 / bbox.area();
    Some((
        class_id,
        LineMask {
            offset: ((sx / n as f64 - half) / half).clamp(-1.0, 1.0),
            bbox,
            extent,
        },
    ))
}

/// Lateral offset of the line in the lower third of the frame, `-1` at the
/// left edge and `+1` at the right edge.
pub fn detect_line(img: &Image, profile: &GeoProfile) -> Option<f64> {
    line_mask(img, profile).map(|(_, m)| m.offset)
}

/// Runs every rule of the profile. Detections carry `frame_id`.
pub fn detect_all(img: &Image, profile: &GeoProfile, frame_id: u64) -> Vec<Detection> {
    let mut out = Vec::new();
    for (class_id, rule) in profile.rules() {
        match rule.rule {
            ShapeRule::Round { .. } => out.extend(detect_round(img, profile, class_id)),
            ShapeRule::Blob { .. } => out.extend(detect_blob(img, profile, class_id)),
            ShapeRule::Arrow { .. } => out.extend(detect_arrows(img, profile, class_id)),
            ShapeRule::Line => {
                if let Some((id, m)) = line_mask(img, profile) {
                    out.extend(
                        Detection::with_class_map(profile.class_map(), id, m.extent.clamp(0.0, 1.0), m.bbox, 0)
                            .ok(),
                    );
                }
            }
        }
    }
    for d in &mut out {
        d.frame_id = frame_id;
    }
    out
}
