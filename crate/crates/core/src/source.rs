//! Frame sources: image directories and synthetic blank sequences.
//!
//! Frame `i` of a source running at `fps` is stamped `i / fps` seconds.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::preprocess::{is_image_path, Image};
use crate::types::FrameMeta;

#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub meta: FrameMeta,
    pub path: Option<PathBuf>,
}

pub trait FrameSource: Send {
    /// Number of frames per pass.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fps(&self) -> f64;

    /// Loads frame `index` of the pass, stamped with `frame_id`.
    fn frame(&mut self, index: usize, frame_id: u64) -> Result<Frame>;
}

fn check_fps(fps: f64) -> Result<f64> {
    if fps.is_finite() && fps > 0.0 {
        Ok(fps)
    } else {
        Err(Error::Config(format!("source rate {fps} must be > 0")))
    }
}

/// Sorted image paths directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::load(dir, None, e.to_string()))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry?.path();
        if p.is_file() && is_image_path(&p) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Images of one directory in file-name order.
#[derive(Debug, Clone)]
pub struct ImageDirSource {
    paths: Vec<PathBuf>,
    fps: f64,
}

impl ImageDirSource {
    pub fn open(dir: &Path, fps: f64) -> Result<Self> {
        let paths = list_images(dir)?;
        if paths.is_empty() {
            return Err(Error::load(dir, None, "no images found"));
        }
        Ok(Self {
            paths,
            fps: check_fps(fps)?,
        })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl FrameSource for ImageDirSource {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame(&mut self, index: usize, frame_id: u64) -> Result<Frame> {
        let path = &self.paths[index % self.paths.len()];
        let image = Image::load(path)?;
        let meta = FrameMeta::new(frame_id, frame_id as f64 / self.fps, image.width(), image.height())?;
        Ok(Frame {
            image,
            meta,
            path: Some(path.clone()),
        })
    }
}

/// `count` identical frames of one color.
#[derive(Debug, Clone)]
pub struct BlankSource {
    image: Image,
    count: usize,
    fps: f64,
}

impl BlankSource {
    pub fn new(width: u32, height: u32, count: usize, fps: f64, rgb: [u8; 3]) -> Result<Self> {
        Ok(Self {
            image: Image::filled(width, height, rgb)?,
            count,
            fps: check_fps(fps)?,
        })
    }
}

impl FrameSource for BlankSource {
    fn len(&self) -> usize {
        self.count
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame(&mut self, _index: usize, frame_id: u64) -> Result<Frame> {
        let meta = FrameMeta::new(frame_id, frame_id as f64 / self.fps, self.image.width(), self.image.height())?;
        Ok(Frame {
            image: self.image.clone(),
            meta,
            path: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_order_and_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png", "notes.txt"] {
            let p = dir.path().join(name);
            if name.ends_with(".png") {
                Image::filled(4, 3, [1, 2, 3]).unwrap().save(&p).unwrap();
            } else {
                std::fs::write(p, "x").unwrap();
            }
        }
        let mut s = ImageDirSource::open(dir.path(), 10.0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.paths()[0].ends_with("a.png"));
        let f = s.frame(1, 1).unwrap();
        assert_eq!((f.meta.width, f.meta.height), (4, 3));
        assert!((f.meta.timestamp - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ImageDirSource::open(dir.path(), 30.0).is_err());
        assert!(BlankSource::new(4, 4, 1, 0.0, [0; 3]).is_err());
    }
}
