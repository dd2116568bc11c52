//! Box and label overlay for human inspection of detector output.

use crate::preprocess::Image;
use crate::types::{DetectionSet, PixelBox};

const PALETTE: [[u8; 3]; 8] = [
    [255, 56, 56],
    [72, 249, 10],
    [0, 194, 255],
    [255, 178, 29],
    [207, 210, 49],
    [146, 204, 23],
    [52, 69, 147],
    [255, 55, 199],
];

const LINE: u32 = 2;
const SCALE: u32 = 2;

pub fn class_color(class_id: u32) -> [u8; 3] {
    PALETTE[class_id as usize % PALETTE.len()]
}

/// 3x5 glyph, rows top to bottom, 3 bits per row (MSB left).
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_lowercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'a' => [2, 5, 7, 5, 5],
        'b' => [6, 5, 6, 5, 6],
        'c' => [3, 4, 4, 4, 3],
        'd' => [6, 5, 5, 5, 6],
        'e' => [7, 4, 6, 4, 7],
        'f' => [7, 4, 6, 4, 4],
        'g' => [3, 4, 5, 5, 3],
        'h' => [5, 5, 7, 5, 5],
        'i' => [7, 2, 2, 2, 7],
        'j' => [1, 1, 1, 5, 2],
        'k' => [5, 5, 6, 5, 5],
        'l' => [4, 4, 4, 4, 7],
        'm' => [5, 7, 7, 5, 5],
        'n' => [6, 5, 5, 5, 5],
        'o' => [2, 5, 5, 5, 2],
        'p' => [6, 5, 6, 4, 4],
        'q' => [2, 5, 5, 6, 3],
        'r' => [6, 5, 6, 5, 5],
        's' => [3, 4, 2, 1, 6],
        't' => [7, 2, 2, 2, 2],
        'u' => [5, 5, 5, 5, 7],
        'v' => [5, 5, 5, 5, 2],
        'w' => [5, 5, 7, 7, 5],
        'x' => [5, 5, 2, 5, 5],
        'y' => [5, 5, 2, 2, 2],
        'z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        '_' => [0, 0, 0, 0, 7],
        '-' => [0, 0, 7, 0, 0],
        _ => [0; 5],
    }
}

fn fill(img: &mut Image, x1: i64, y1: i64, x2: i64, y2: i64, rgb: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in y1.max(0)..y2.min(h) {
        for x in x1.max(0)..x2.min(w) {
            img.set_pixel(x as u32, y as u32, rgb);
        }
    }
}

fn outline(img: &mut Image, b: &PixelBox, rgb: [u8; 3]) {
    let (x1, y1) = (b.x1().floor() as i64, b.y1().floor() as i64);
    let (x2, y2) = (b.x2().ceil() as i64, b.y2().ceil() as i64);
    let t = LINE as i64;
    fill(img, x1, y1, x2, y1 + t, rgb);
    fill(img, x1, y2 - t, x2, y2, rgb);
    fill(img, x1, y1, x1 + t, y2, rgb);
    fill(img, x2 - t, y1, x2, y2, rgb);
}

/// Draws `text` on a filled background with its top-left corner at `(x, y)`.
pub fn draw_text(img: &mut Image, x: i64, y: i64, text: &str, fg: [u8; 3], bg: [u8; 3]) {
    let s = SCALE as i64;
    let n = text.chars().count() as i64;
    fill(img, x, y, x + n * 4 * s + s, y + 7 * s, bg);
    for (i, c) in text.chars().enumerate() {
        let gx = x + s + i as i64 * 4 * s;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    let px = gx + col * s;
                    let py = y + s + row as i64 * s;
                    fill(img, px, py, px + s, py + s, fg);
                }
            }
        }
    }
}

/// Copy of `img` with every detection's box, label and confidence drawn.
pub fn annotate(img: &Image, set: &DetectionSet) -> Image {
    let mut out = img.clone();
    for d in set.detections() {
        let color = class_color(d.class_id);
        outline(&mut out, &d.bbox, color);
        let text = format!("{} {:.2}", d.label, d.confidence());
        let label_h = 7 * SCALE as i64;
        let y = d.bbox.y1().floor() as i64;
        let y = if y >= label_h { y - label_h } else { y };
        draw_text(&mut out, d.bbox.x1().floor() as i64, y, &text, [255, 255, 255], color);
    }
    out
}
