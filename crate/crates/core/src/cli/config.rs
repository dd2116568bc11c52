//! Runtime configuration: defaults, then a TOML file, then environment, then
//! flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::DEFAULT_PORT;
use crate::detector::{Detector, ExternalDetector, GeometricDetector, Pipeline, ScriptedDetector};
use crate::error::{Error, Result};
use crate::geometric::GeoProfile;
use crate::postprocess::{NmsConfig, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use crate::preprocess::DEFAULT_MODEL_SIZE;
use crate::scheduling::{Clock, Schedule, SimClock, WallClock, DEFAULT_RATE_CAP};
use crate::types::{ClassMap, Event};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Geometric,
    Scripted,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    Wall,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub detector: DetectorKind,
    pub event: Event,
    /// Custom geometric profile; the event's built-in profile otherwise.
    pub profile: Option<PathBuf>,
    /// Prediction log replayed by the scripted detector.
    pub script: Option<PathBuf>,
    /// Synthetic scripted-detector latency.
    pub latency_ms: f64,
    /// Inference server used by the external detector.
    pub model_endpoint: String,
    pub timeout_ms: u64,
    /// Model-plane size advertised by `model-server` for the scripted backend.
    pub model_size: u32,
    pub skip: u64,
    /// Detections per second; `None` disables the cap.
    pub rate_cap: Option<f64>,
    /// Frame rate assumed for sources.
    pub fps: f64,
    pub confidence: f64,
    pub nms_iou: f64,
    pub eval_iou: f64,
    /// Gateway address the listener connects to.
    pub endpoint: String,
    /// Gateway port the detection node binds.
    pub port: u16,
    pub clock: ClockKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::Geometric,
            event: Event::Basketball,
            profile: None,
            script: None,
            latency_ms: 0.0,
            model_endpoint: "ws://127.0.0.1:8766".into(),
            timeout_ms: 2000,
            model_size: DEFAULT_MODEL_SIZE,
            skip: 1,
            rate_cap: Some(DEFAULT_RATE_CAP),
            fps: 30.0,
            confidence: DEFAULT_CONFIDENCE_THRESHOLD,
            nms_iou: DEFAULT_IOU_THRESHOLD,
            eval_iou: 0.5,
            endpoint: format!("ws://127.0.0.1:{DEFAULT_PORT}"),
            port: DEFAULT_PORT,
            clock: ClockKind::Wall,
        }
    }
}

/// Same fields as [`RunConfig`], all optional. `rate_cap = 0` disables the cap.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub detector: Option<DetectorKind>,
    pub event: Option<Event>,
    pub profile: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub latency_ms: Option<f64>,
    pub model_endpoint: Option<String>,
    pub timeout_ms: Option<u64>,
    pub model_size: Option<u32>,
    pub skip: Option<u64>,
    pub rate_cap: Option<f64>,
    pub fps: Option<f64>,
    pub confidence: Option<f64>,
    pub nms_iou: Option<f64>,
    pub eval_iou: Option<f64>,
    pub endpoint: Option<String>,
    pub port: Option<u16>,
    pub clock: Option<ClockKind>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, None, e.to_string()))?;
        Self::parse(&text).map_err(|e| Error::load(path, None, e.to_string()))
    }
}

fn parse_event(s: &str) -> std::result::Result<Event, String> {
    s.parse::<Event>().map_err(|_| "expected basketball, archery or marathon".to_string())
}

/// Flags shared by every command. Each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with any of the settings below.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub detector: Option<DetectorKind>,
    /// basketball, archery or marathon.
    #[arg(long, global = true, value_parser = parse_event)]
    pub event: Option<Event>,
    /// Geometric profile TOML.
    #[arg(long, global = true, value_name = "FILE")]
    pub profile: Option<PathBuf>,
    /// Prediction JSONL replayed by the scripted detector.
    #[arg(long, global = true, value_name = "FILE")]
    pub script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub latency_ms: Option<f64>,
    /// Inference server for the external detector.
    #[arg(long, global = true, value_name = "URL")]
    pub model_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    pub model_size: Option<u32>,
    /// Process every nth frame.
    #[arg(long, global = true)]
    pub skip: Option<u64>,
    /// Detections per second, 0 for no cap.
    #[arg(long, global = true)]
    pub rate_cap: Option<f64>,
    #[arg(long, global = true)]
    pub fps: Option<f64>,
    #[arg(long, global = true)]
    pub confidence: Option<f64>,
    #[arg(long, global = true)]
    pub nms_iou: Option<f64>,
    #[arg(long, global = true)]
    pub eval_iou: Option<f64>,
    /// Gateway the listener connects to.
    #[arg(long, global = true, env = "HUROVISION_ENDPOINT", value_name = "URL")]
    pub endpoint: Option<String>,
    /// Gateway port the detection node binds.
    #[arg(long, global = true, env = "HUROVISION_PORT")]
    pub port: Option<u16>,
    #[arg(long, global = true, value_enum)]
    pub clock: Option<ClockKind>,
}

fn cap(v: f64) -> Option<f64> {
    (v != 0.0).then_some(v)
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let mut c = Self::default();
        macro_rules! layer {
            ($src:expr) => {{
                let s = $src;
                if let Some(v) = s.detector { c.detector = v; }
                if let Some(v) = s.event { c.event = v; }
                if let Some(v) = s.profile.clone() { c.profile = Some(v); }
                if let Some(v) = s.script.clone() { c.script = Some(v); }
                if let Some(v) = s.latency_ms { c.latency_ms = v; }
                if let Some(v) = s.model_endpoint.clone() { c.model_endpoint = v; }
                if let Some(v) = s.timeout_ms { c.timeout_ms = v; }
                if let Some(v) = s.model_size { c.model_size = v; }
                if let Some(v) = s.skip { c.skip = v; }
                if let Some(v) = s.rate_cap { c.rate_cap = cap(v); }
                if let Some(v) = s.fps { c.fps = v; }
                if let Some(v) = s.confidence { c.confidence = v; }
                if let Some(v) = s.nms_iou { c.nms_iou = v; }
                if let Some(v) = s.eval_iou { c.eval_iou = v; }
                if let Some(v) = s.endpoint.clone() { c.endpoint = v; }
                if let Some(v) = s.port { c.port = v; }
                if let Some(v) = s.clock { c.clock = v; }
            }};
        }
        layer!(&file);
        layer!(args);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.nms().map_err(cfg)?;
        self.schedule().map_err(cfg)?;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps {} must be > 0", self.fps)));
        }
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            return Err(Error::Config(format!("latency_ms {} must be >= 0", self.latency_ms)));
        }
        if !(0.0..=1.0).contains(&self.eval_iou) {
            return Err(Error::Config(format!("eval_iou {} outside [0,1]", self.eval_iou)));
        }
        if self.model_size == 0 || self.timeout_ms == 0 {
            return Err(Error::Config("model_size and timeout_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn nms(&self) -> Result<NmsConfig> {
        NmsConfig::new(self.nms_iou, self.confidence, true)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.skip, self.rate_cap)
    }

    pub fn class_map(&self) -> ClassMap {
        ClassMap::for_event(self.event)
    }

    pub fn make_clock(&self) -> Arc<dyn Clock> {
        match self.clock {
            ClockKind::Wall => Arc::new(WallClock::new()),
            ClockKind::Sim => Arc::new(SimClock::new()),
        }
    }

    pub fn geo_profile(&self) -> Result<GeoProfile> {
        match &self.profile {
            None => Ok(GeoProfile::builtin(self.event)),
            Some(p) => {
                let profile = GeoProfile::load(p)?;
                if profile.event() != self.event {
                    return Err(Error::Config(format!(
                        "profile {} is for {}, not {}",
                        p.display(),
                        profile.event().name(),
                        self.event.name()
                    )));
                }
                Ok(profile)
            }
        }
    }

    /// The configured backend without the pipeline wrapper.
    pub fn backend(&self, clock: Arc<dyn Clock>) -> Result<Box<dyn Detector>> {
        Ok(match self.detector {
            DetectorKind::Geometric => Box::new(GeometricDetector::new(self.geo_profile()?)),
            DetectorKind::Scripted => {
                let path = self
                    .script
                    .as_deref()
                    .ok_or_else(|| Error::Config("the scripted detector needs --script".into()))?;
                Box::new(
                    ScriptedDetector::from_jsonl(path, self.class_map())?
                        .with_latency(self.latency_ms, clock)?,
                )
            }
            DetectorKind::External => Box::new(ExternalDetector::connect(
                &self.model_endpoint,
                Duration::from_millis(self.timeout_ms),
            )?),
        })
    }

    pub fn pipeline(&self, clock: Arc<dyn Clock>) -> Result<Pipeline<Box<dyn Detector>>> {
        Ok(Pipeline::new(self.backend(clock)?, self.nms()?))
    }

    /// First 8 hex digits of a SHA-256 over the command name and settings.
    pub fn digest(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Creates a fresh run directory `<root>/<timestamp>-<command>-<digest>`, adding a
/// numeric suffix rather than reusing an existing one.
pub fn create_run_dir(root: &Path, cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let base = format!("{}-{}-{}", chrono::Local::now().format("%Y%m%d-%H%M%S"), command, cfg.digest(command));
    for n in 0u32.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => {
                std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("u32 suffixes exhausted")
}
