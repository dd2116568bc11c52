//! Vision pipeline for a small humanoid robot, independent of camera and
//! model hardware.
//!
//! Frames are letterboxed onto a square model plane ([`preprocess`]), run
//! through a pluggable [`detector`] backend, filtered and suppressed
//! ([`postprocess`]) and mapped back to source coordinates. Detections travel
//! between processes as JSON over a WebSocket [`bridge`] and are republished
//! on named topics. [`scheduling`] bounds the inference load, [`geometric`]
//! provides the classical color-segmentation baseline and [`evaluation`]
//! measures precision, recall, mAP and FPS.

pub mod bridge;
pub mod cli;
pub mod detector;
pub mod draw;
pub mod error;
pub mod evaluation;
pub mod geometric;
pub mod node;
pub mod postprocess;
pub mod preprocess;
pub mod scheduling;
pub mod source;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{ClassMap, Detection, DetectionSet, Event, FrameMeta, NormBox, PixelBox};
