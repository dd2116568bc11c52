//! Letterbox resizing onto the square model plane and the inverse box mapping.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::PixelBox;

/// Default square model input side.
pub const DEFAULT_MODEL_SIZE: u32 = 640;

/// Gray level used for letterbox padding.
pub const DEFAULT_FILL: u8 = 114;

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::geometry(format!("image is {width}x{height}")));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mirror around the vertical center line.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// Reads a PNG or binary PPM (P6) file.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    /// Writes PNG or PPM, chosen by the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
            Some("png") => image::ImageFormat::Png,
            other => {
                return Err(Error::Image(format!(
                    "unsupported output extension {other:?} for {}",
                    path.display()
                )))
            }
        };
        let buf = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
        if format == image::ImageFormat::Pnm {
            let file = std::fs::File::create(path)?;
            let enc = image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(
                    image::codecs::pnm::SampleEncoding::Binary,
                ));
            image::ImageEncoder::write_image(
                enc,
                buf.as_raw(),
                self.width,
                self.height,
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        } else {
            buf.save_with_format(path, format)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        }
    }
}

/// True if the path has an extension this crate can decode as a frame.
pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png") | Some("ppm") | Some("pnm")
    )
}

/// Scale and padding mapping a `src_w × src_h` frame onto a `dst × dst` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LetterboxParams {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub src_w: u32,
    pub src_h: u32,
    pub dst: u32,
}

impl LetterboxParams {
    pub fn identity(size: u32) -> Self {
        Self {
            scale: 1.0,
            pad_x: 0.0,
            pad_y: 0.0,
            src_w: size,
            src_h: size,
            dst: size,
        }
    }

    /// Width and height of the resized content region on the model plane.
    pub fn content_size(&self) -> (f64, f64) {
        (self.src_w as f64 * self.scale, self.src_h as f64 * self.scale)
    }
}

pub fn letterbox_params(src_w: u32, src_h: u32, dst: u32) -> Result<LetterboxParams> {
    if src_w == 0 || src_h == 0 || dst == 0 {
        return Err(Error::geometry(format!(
            "letterbox {src_w}x{src_h} -> {dst} has a zero dimension"
        )));
    }
    let d = dst as f64;
    let scale = (d / src_w as f64).min(d / src_h as f64);
    Ok(LetterboxParams {
        scale,
        pad_x: ((d - src_w as f64 * scale) / 2.0).max(0.0),
        pad_y: ((d - src_h as f64 * scale) / 2.0).max(0.0),
        src_w,
        src_h,
        dst,
    })
}

/// Resamples `img` onto the `dst × dst` plane: bilinear content, centered,
/// surrounded by `fill` on every channel.
///
/// Output pixel centers are mapped through the same continuous transform as
/// [`letterbox_box`], so image content and box math agree exactly.
pub fn apply_letterbox(img: &Image, p: &LetterboxParams, fill: u8) -> Result<Image> {
    if img.width != p.src_w || img.height != p.src_h {
        return Err(Error::InvalidArgument(format!(
            "params for {}x{} applied to {}x{} image",
            p.src_w, p.src_h, img.width, img.height
        )));
    }
    if !(p.scale.is_finite() && p.scale > 0.0) {
        return Err(Error::geometry(format!("letterbox scale {}", p.scale)));
    }
    let dst = p.dst;
    let (cw, ch) = p.content_size();
    let mut out = Image::filled(dst, dst, [fill; 3])?;
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    for oy in 0..dst {
        let py = oy as f64 + 0.5 - p.pad_y;
        if py < 0.0 || py >= ch {
            continue;
        }
        let sy = (py / p.scale - 0.5).clamp(0.0, max_y);
        let y0 = sy.floor() as u32;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..dst {
            let px = ox as f64 + 0.5 - p.pad_x;
            if px < 0.0 || px >= cw {
                continue;
            }
            let sx = (px / p.scale - 0.5).clamp(0.0, max_x);
            let x0 = sx.floor() as u32;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let (a, b, c, d) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
            let mut rgb = [0u8; 3];
            for k in 0..3 {
                let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
                let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
                rgb[k] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(ox, oy, rgb);
        }
    }
    Ok(out)
}

/// Maps a source-plane box onto the model plane.
pub fn letterbox_box(b: &PixelBox, p: &LetterboxParams) -> Result<PixelBox> {
    PixelBox::new(
        b.x1() * p.scale + p.pad_x,
        b.y1() * p.scale + p.pad_y,
        b.x2() * p.scale + p.pad_x,
        b.y2() * p.scale + p.pad_y,
    )
}

/// Maps a model-plane box back to the source frame, clamped to its bounds.
pub fn unletterbox_box(b: &PixelBox, p: &LetterboxParams) -> Result<PixelBox> {
    if !(p.scale.is_finite() && p.scale > 0.0) {
        return Err(Error::geometry(format!("letterbox scale {}", p.scale)));
    }
    PixelBox::new(
        (b.x1() - p.pad_x) / p.scale,
        (b.y1() - p.pad_y) / p.scale,
        (b.x2() - p.pad_x) / p.scale,
        (b.y2() - p.pad_y) / p.scale,
    )?
    .clamp_to(p.src_w as f64, p.src_h as f64)
}
