//! The detection node loop: frames in, scheduled detections out.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use log::debug;
use serde::Serialize;

use crate::bridge::DetectionMessage;
use crate::detector::Detector;
use crate::error::Result;
use crate::scheduling::{Clock, LoadStrategy};
use crate::source::FrameSource;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeOptions {
    /// Stop after this many source frames.
    pub max_frames: Option<u64>,
    /// Restart the source when it runs out.
    pub loop_source: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct NodeStats {
    pub frames: u64,
    pub processed: u64,
    pub published: u64,
}

/// Replays `source` at its frame rate on `clock`. Frame `i` is due at
/// `i / fps` seconds after the start; frames the schedule admits are run
/// through `detector` and handed to `publish`.
pub fn run_node(
    detector: &mut dyn Detector,
    source: &mut dyn FrameSource,
    schedule: &mut dyn LoadStrategy,
    clock: &dyn Clock,
    opts: &NodeOptions,
    stop: &AtomicBool,
    mut publish: impl FnMut(DetectionMessage) -> Result<()>,
) -> Result<NodeStats> {
    let mut stats = NodeStats::default();
    let len = source.len() as u64;
    if len == 0 {
        return Ok(stats);
    }
    let start = clock.now();
    let fps = source.fps();
    for i in 0.. {
        if stop.load(Ordering::SeqCst)
            || opts.max_frames.is_some_and(|m| i >= m)
            || (!opts.loop_source && i >= len)
        {
            break;
        }
        let due = start + i as f64 / fps;
        let now = clock.now();
        if due > now {
            clock.sleep(Duration::from_secs_f64(due - now));
        }
        stats.frames += 1;
        if !schedule.admit(i, clock.now())? {
            continue;
        }
        let frame = source.frame((i % len) as usize, i)?;
        let set = detector.detect(&frame.image, &frame.meta)?;
        stats.processed += 1;
        debug!("frame {i}: {} detections", set.len());
        publish(DetectionMessage::from_set(&set)?)?;
        stats.published += 1;
    }
    Ok(stats)
}
