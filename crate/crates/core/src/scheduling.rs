//! Inference load control: frame skipping, rate limiting and FPS measurement.
//!
//! Time always comes from a [`Clock`] so that every scheduler decision can be
//! replayed exactly under a [`SimClock`].

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

/// Default inference cap, detections per second.
pub const DEFAULT_RATE_CAP: f64 = 20.0;

/// Tolerance absorbing float drift when a bucket refills to exactly one token.
const TOKEN_EPSILON: f64 = 1e-9;

pub trait Clock: Send + Sync {
    /// Seconds since the clock's origin. Never decreases.
    fn now(&self) -> f64;

    /// Blocks (wall clock) or advances time (simulated clock).
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Deterministic clock; time only moves through [`SimClock::advance`] or `sleep`.
///
/// Stored as integer nanoseconds so repeated advances never accumulate drift.
#[derive(Debug, Default)]
pub struct SimClock {
    nanos: AtomicU64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn set_secs(&self, secs: f64) {
        self.nanos.store((secs * 1e9).round() as u64, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.nanos.load(Ordering::SeqCst) as f64 / 1e9
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Admission policy deciding which frames reach the detector.
///
/// Adaptive variants (load-dependent skipping or resolution) plug in here;
/// only the fixed-stride and fixed-cap strategies ship.
pub trait LoadStrategy: Send {
    fn admit(&mut self, frame_index: u64, now: f64) -> Result<bool>;
}

/// Accepts every `n`th frame.
#[derive(Debug, Clone)]
pub struct FrameSkipper {
    n: u64,
    seen: u64,
}

impl FrameSkipper {
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("frame-skip stride must be >= 1".into()));
        }
        Ok(Self { n, seen: 0 })
    }

    pub fn stride(&self) -> u64 {
        self.n
    }

    pub fn frames_seen(&self) -> u64 {
        self.seen
    }

    pub fn accept(&mut self, frame_index: u64) -> bool {
        self.seen += 1;
        frame_index.is_multiple_of(self.n)
    }
}

impl LoadStrategy for FrameSkipper {
    fn admit(&mut self, frame_index: u64, _now: f64) -> Result<bool> {
        Ok(self.accept(frame_index))
    }
}

/// Token bucket holding at most one token, refilled at `max_per_second`.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    max_per_second: f64,
    capacity: f64,
    tokens: f64,
    last: Option<f64>,
}

impl RateLimiter {
    pub fn new(max_per_second: f64) -> Result<Self> {
        if !(max_per_second.is_finite() && max_per_second > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rate cap {max_per_second} must be positive"
            )));
        }
        Ok(Self {
            max_per_second,
            capacity: 1.0,
            tokens: 1.0,
            last: None,
        })
    }

    pub fn max_per_second(&self) -> f64 {
        self.max_per_second
    }

    pub fn allow(&mut self, now: f64) -> Result<bool> {
        if let Some(prev) = self.last {
            if now < prev {
                return Err(Error::ClockSkew { previous: prev, now });
            }
            self.tokens = (self.tokens + (now - prev) * self.max_per_second).min(self.capacity);
        }
        self.last = Some(now);
        if self.tokens >= 1.0 - TOKEN_EPSILON {
            self.tokens = (self.tokens - 1.0).max(0.0);
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

impl LoadStrategy for RateLimiter {
    fn admit(&mut self, _frame_index: u64, now: f64) -> Result<bool> {
        self.allow(now)
    }
}

/// Frame skipping followed by rate limiting. The limiter only spends tokens on
/// frames the skipper admitted.
#[derive(Debug, Clone)]
pub struct Schedule {
    skipper: FrameSkipper,
    limiter: Option<RateLimiter>,
}

impl Schedule {
    pub fn new(skip: u64, rate_cap: Option<f64>) -> Result<Self> {
        Ok(Self {
            skipper: FrameSkipper::new(skip)?,
            limiter: rate_cap.map(RateLimiter::new).transpose()?,
        })
    }

    /// Admits every frame.
    pub fn unlimited() -> Self {
        Self {
            skipper: FrameSkipper::new(1).expect("stride 1"),
            limiter: None,
        }
    }
}

impl LoadStrategy for Schedule {
    fn admit(&mut self, frame_index: u64, now: f64) -> Result<bool> {
        if !self.skipper.accept(frame_index) {
            return Ok(false);
        }
        match &mut self.limiter {
            Some(l) => l.allow(now),
            None => Ok(true),
        }
    }
}

/// Sliding-window throughput meter. Safe to tick and report from several threads.
#[derive(Debug)]
pub struct FpsMeter {
    window: f64,
    inner: Mutex<MeterState>,
}

#[derive(Debug, Default)]
struct MeterState {
    completions: VecDeque<f64>,
    ticked: bool,
}

impl FpsMeter {
    pub fn new(window_secs: f64) -> Result<Self> {
        if !(window_secs.is_finite() && window_secs > 0.0) {
            return Err(Error::InvalidArgument(format!("FPS window {window_secs} must be > 0")));
        }
        Ok(Self {
            window: window_secs,
            inner: Mutex::new(MeterState::default()),
        })
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Records one completed frame at `now`.
    pub fn tick(&self, now: f64) {
        let mut s = self.inner.lock().unwrap();
        s.ticked = true;
        s.completions.push_back(now);
        let horizon = now - self.window;
        while s.completions.front().is_some_and(|&t| t < horizon) {
            s.completions.pop_front();
        }
    }

    /// Completions within `[now - window, now]` divided by the window length.
    pub fn report(&self, now: f64) -> Result<f64> {
        let s = self.inner.lock().unwrap();
        if !s.ticked {
            return Err(Error::NoData("FPS meter never ticked".into()));
        }
        let lo = now - self.window;
        let n = s.completions.iter().filter(|&&t| t >= lo && t <= now).count();
        Ok(n as f64 / self.window)
    }
}

/// Nearest-rank percentile of `values` (`q` in `[0,1]`). `None` when empty.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}
