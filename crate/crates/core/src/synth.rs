//! Rasterizers for synthetic fixture frames: disks, polygons and arrow markers.
//!
//! Pixels are filled when their center `(x + 0.5, y + 0.5)` lies inside the shape.

use crate::preprocess::Image;

pub fn fill_disk(img: &mut Image, cx: f64, cy: f64, r: f64, rgb: [u8; 3]) {
    fill_where(img, (cx - r, cy - r, cx + r, cy + r), |x, y| {
        (x - cx).powi(2) + (y - cy).powi(2) <= r * r
    }, rgb);
}

/// Fills the part of the disk for which `keep(x, y)` holds.
pub fn fill_disk_part(
    img: &mut Image,
    cx: f64,
    cy: f64,
    r: f64,
    rgb: [u8; 3],
    keep: impl Fn(f64, f64) -> bool,
) {
    fill_where(img, (cx - r, cy - r, cx + r, cy + r), |x, y| {
        (x - cx).powi(2) + (y - cy).powi(2) <= r * r && keep(x, y)
    }, rgb);
}

pub fn fill_rect(img: &mut Image, x1: f64, y1: f64, x2: f64, y2: f64, rgb: [u8; 3]) {
    fill_where(img, (x1, y1, x2, y2), |x, y| x >= x1 && x < x2 && y >= y1 && y < y2, rgb);
}

/// Even-odd fill of a simple polygon.
pub fn fill_polygon(img: &mut Image, pts: &[(f64, f64)], rgb: [u8; 3]) {
    if pts.len() < 3 {
        return;
    }
    let (mut x1, mut y1, mut x2, mut y2) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in pts {
        x1 = x1.min(x);
        y1 = y1.min(y);
        x2 = x2.max(x);
        y2 = y2.max(y);
    }
    fill_where(img, (x1, y1, x2, y2), |x, y| point_in_polygon(pts, x, y), rgb);
}

fn point_in_polygon(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn fill_where(
    img: &mut Image,
    bounds: (f64, f64, f64, f64),
    inside: impl Fn(f64, f64) -> bool,
    rgb: [u8; 3],
) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = bounds.0.floor().clamp(0.0, w) as u32;
    let y0 = bounds.1.floor().clamp(0.0, h) as u32;
    let x1 = bounds.2.ceil().clamp(0.0, w) as u32;
    let y1 = bounds.3.ceil().clamp(0.0, h) as u32;
    for y in y0..y1 {
        for x in x0..x1 {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                img.set_pixel(x, y, rgb);
            }
        }
    }
}

/// Arrow outline of the given total `length`, centered on `(cx, cy)` and
/// pointing along `angle_deg` (0 = right, -90 = up in image coordinates).
///
/// The shaft takes 60% of the length and 20% of it in width; the head is a
/// triangle 48% of the length wide.
pub fn arrow_polygon(cx: f64, cy: f64, length: f64, angle_deg: f64) -> Vec<(f64, f64)> {
    let l = length;
    let local = [
        (-0.5 * l, -0.10 * l),
        (0.1 * l, -0.10 * l),
        (0.1 * l, -0.24 * l),
        (0.5 * l, 0.0),
        (0.1 * l, 0.24 * l),
        (0.1 * l, 0.10 * l),
        (-0.5 * l, 0.10 * l),
    ];
    let (s, c) = angle_deg.to_radians().sin_cos();
    local
        .iter()
        .map(|&(x, y)| (cx + x * c - y * s, cy + x * s + y * c))
        .collect()
}
