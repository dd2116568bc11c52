//! The `hurovision` command line.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 runtime or
//! transport error.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use clap::{Parser, Subcommand};
use log::{info, warn};

pub use config::{create_run_dir, ClockKind, ConfigFile, DetectorKind, RunArgs, RunConfig};

use crate::bridge::{
    encode, listener_run, topic, Broker, DetectionMessage, GatewayConfig, GatewayServer, Link,
    ReconnectPolicy, TOPIC_OUTBOUND,
};
use crate::detector::{Detector, InferenceServer};
use crate::draw::annotate;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_log, run_benchmark, BenchConfig, BenchMode, Comparison, EvalConfig, GroundTruthSet,
    PredictionLog,
};
use crate::node::{run_node, NodeOptions};
use crate::source::{BlankSource, FrameSource, ImageDirSource};

#[derive(Debug, Parser)]
#[command(name = "hurovision", version, about = "Robot vision pipeline: detect, bridge, evaluate, benchmark")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,
    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs", value_name = "DIR")]
    pub out: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SourceArgs {
    /// Directory of frames, processed in file-name order.
    #[arg(long, value_name = "DIR", conflicts_with = "blank")]
    pub input: Option<PathBuf>,
    /// Synthetic gray frames of this size, e.g. 640x480.
    #[arg(long, value_name = "WxH")]
    pub blank: Option<String>,
    /// Number of synthetic frames.
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the detector over a directory, writing annotated frames and a JSONL log.
    Detect {
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Skip writing annotated images.
        #[arg(long)]
        no_images: bool,
    },
    /// Detection node: publish detections for a frame source over the gateway.
    Serve {
        #[command(flatten)]
        source: SourceArgs,
        /// Interface to bind.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Wait for this many listeners before streaming.
        #[arg(long, default_value_t = 0)]
        wait_peers: usize,
        #[arg(long, default_value_t = 30_000)]
        wait_timeout_ms: u64,
        /// Stop after this many source frames.
        #[arg(long)]
        max_frames: Option<u64>,
        /// Replay the source until interrupted.
        #[arg(long = "loop")]
        loop_source: bool,
    },
    /// Listener node: republish gateway messages onto topics and log them.
    Listen {
        /// Exit after this many messages.
        #[arg(long)]
        max_messages: Option<u64>,
        /// Give up after this many failed connection attempts in a row.
        #[arg(long)]
        max_attempts: Option<u32>,
    },
    /// Score a prediction log against a ground-truth directory.
    Eval {
        #[arg(long, value_name = "FILE")]
        predictions: PathBuf,
        #[arg(long, value_name = "DIR")]
        gt: PathBuf,
    },
    /// Measure throughput (idle) or throughput and precision (static, dynamic).
    Bench {
        #[arg(long, value_parser = parse_mode)]
        mode: BenchMode,
        #[command(flatten)]
        source: SourceArgs,
        /// Ground truth; defaults to the input directory in precision modes.
        #[arg(long, value_name = "DIR")]
        gt: Option<PathBuf>,
        /// Seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
    /// Benchmark two detectors on the same annotated set.
    Compare {
        /// geometric, scripted=FILE or external=URL
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        gt: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "static")]
        mode: BenchMode,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
    /// Serve the configured backend to external-detector clients.
    ModelServer {
        #[arg(long, default_value = "127.0.0.1:8766")]
        bind: SocketAddr,
        /// Advertise the model-plane size for the scripted backend.
        #[arg(long)]
        model_plane: bool,
    },
}

fn parse_mode(s: &str) -> std::result::Result<BenchMode, String> {
    s.parse().map_err(|_| "expected idle, static or dynamic".to_string())
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Transport(_) | Error::DetectorUnavailable(_) | Error::Timeout(_) | Error::ClockSkew { .. } => 3,
        _ => 2,
    }
}

fn stop_flag() -> Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
            warn!("cannot install interrupt handler: {e}");
        }
        flag
    })
    .clone()
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.run)?;
    match cli.command {
        Command::Detect { input, no_images } => cmd_detect(&cfg, &cli.out, &input, !no_images),
        Command::Serve {
            source,
            host,
            wait_peers,
            wait_timeout_ms,
            max_frames,
            loop_source,
        } => {
            let bind: SocketAddr = format!("{host}:{}", cfg.port)
                .parse()
                .map_err(|e| Error::Config(format!("bad bind address {host}: {e}")))?;
            let opts = NodeOptions { max_frames, loop_source };
            cmd_serve(&cfg, &cli.out, &source, bind, wait_peers, Duration::from_millis(wait_timeout_ms), opts)
        }
        Command::Listen { max_messages, max_attempts } => cmd_listen(&cfg, &cli.out, max_messages, max_attempts),
        Command::Eval { predictions, gt } => cmd_eval(&cfg, &cli.out, &predictions, &gt),
        Command::Bench { mode, source, gt, duration } => cmd_bench(&cfg, &cli.out, mode, &source, gt.as_deref(), duration),
        Command::Compare { a, b, input, gt, mode, duration } => {
            cmd_compare(&cfg, &cli.out, &a, &b, &input, gt.as_deref().unwrap_or(&input), mode, duration)
        }
        Command::ModelServer { bind, model_plane } => cmd_model_server(&cfg, bind, model_plane),
    }
}

fn open_source(args: &SourceArgs, fps: f64) -> Result<Box<dyn FrameSource>> {
    match (&args.input, &args.blank) {
        (Some(dir), _) => Ok(Box::new(ImageDirSource::open(dir, fps)?)),
        (None, Some(size)) => {
            let (w, h) = size
                .split_once('x')
                .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
                .ok_or_else(|| Error::Config(format!("--blank {size:?} is not WxH")))?;
            Ok(Box::new(BlankSource::new(w, h, args.frames, fps, [114, 114, 114])?))
        }
        (None, None) => Err(Error::Config("give --input DIR or --blank WxH".into())),
    }
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_line(w: &mut impl Write, m: &DetectionMessage) -> Result<()> {
    writeln!(w, "{}", encode(m))?;
    Ok(())
}

fn finish(run_dir: &Path) {
    println!("run directory: {}", run_dir.display());
}

fn cmd_detect(cfg: &RunConfig, out: &Path, input: &Path, images: bool) -> Result<()> {
    let mut source = ImageDirSource::open(input, cfg.fps)?;
    let clock = cfg.make_clock();
    let mut detector = cfg.pipeline(clock)?;
    let run_dir = create_run_dir(out, cfg, "detect")?;
    let frames_dir = run_dir.join("frames");
    if images {
        std::fs::create_dir(&frames_dir)?;
    }
    let mut log = jsonl_writer(&run_dir.join("predictions.jsonl"))?;
    let mut total = 0;
    for i in 0..source.len() {
        let frame = source.frame(i, i as u64)?;
        let set = detector.detect(&frame.image, &frame.meta)?;
        total += set.len();
        write_line(&mut log, &DetectionMessage::from_set(&set)?)?;
        if images {
            let stem = frame
                .path
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("{i:06}"));
            annotate(&frame.image, &set).save(&frames_dir.join(format!("{stem}.png")))?;
        }
    }
    log.flush()?;
    println!("{} frames, {total} detections", source.len());
    finish(&run_dir);
    Ok(())
}

fn cmd_serve(
    cfg: &RunConfig,
    out: &Path,
    source_args: &SourceArgs,
    bind: SocketAddr,
    wait_peers: usize,
    wait_timeout: Duration,
    opts: NodeOptions,
) -> Result<()> {
    let mut source = open_source(source_args, cfg.fps)?;
    let clock = cfg.make_clock();
    let mut detector = cfg.pipeline(clock.clone())?;
    let mut schedule = cfg.schedule()?;
    let broker = Arc::new(Broker::new());
    let server = GatewayServer::serve(
        broker.clone(),
        GatewayConfig {
            bind,
            queue_capacity: 1 << 16,
            ..GatewayConfig::default()
        },
    )?;
    let run_dir = create_run_dir(out, cfg, "serve")?;
    eprintln!("serving on {}", server.url());
    if wait_peers > 0 && !server.wait_for_peers(wait_peers, wait_timeout) {
        return Err(Error::Transport(format!(
            "{wait_peers} listener(s) did not connect within {} ms",
            wait_timeout.as_millis()
        )));
    }
    let stop = stop_flag();
    let outbound = topic(TOPIC_OUTBOUND);
    let mut log = jsonl_writer(&run_dir.join("published.jsonl"))?;
    let stats = run_node(&mut detector, source.as_mut(), &mut schedule, clock.as_ref(), &opts, &stop, |m| {
        write_line(&mut log, &m)?;
        broker.publish(&outbound, m)?;
        Ok(())
    })?;
    log.flush()?;
    if !server.flush(Duration::from_secs(10)) {
        warn!("not every message reached the listeners before shutdown");
    }
    info!("gateway stats: {:?}", server.stats());
    server.shutdown();
    println!("{} frames, {} processed, {} published", stats.frames, stats.processed, stats.published);
    finish(&run_dir);
    Ok(())
}

fn cmd_listen(cfg: &RunConfig, out: &Path, max_messages: Option<u64>, max_attempts: Option<u32>) -> Result<()> {
    let policy = ReconnectPolicy {
        max_attempts,
        ..ReconnectPolicy::default()
    };
    let link = Link::connect(&cfg.endpoint, policy)?;
    let run_dir = create_run_dir(out, cfg, "listen")?;
    let mut log = jsonl_writer(&run_dir.join("republished.jsonl"))?;
    let broker: Broker<DetectionMessage> = Broker::new();
    let stop = stop_flag();
    let mut write_err = None;
    let mut count = 0u64;
    let stats = listener_run(link, &broker, &stop, |m| {
        if let Err(e) = write_line(&mut log, m).and_then(|_| Ok(log.flush()?)) {
            write_err.get_or_insert(e);
            stop.store(true, Ordering::SeqCst);
        }
        info!("frame {} with {} detections", m.frame_id(), m.detections().len());
        count += 1;
        if max_messages.is_some_and(|n| count >= n) {
            stop.store(true, Ordering::SeqCst);
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    println!(
        "{} received, {} republished, {} malformed",
        stats.received, stats.republished, stats.malformed
    );
    finish(&run_dir);
    if !stop.load(Ordering::SeqCst) {
        return Err(Error::Transport(format!("gave up connecting to {}", cfg.endpoint)));
    }
    Ok(())
}

fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        iou_t: cfg.eval_iou,
        conf_t: cfg.confidence,
    }
}

fn cmd_eval(cfg: &RunConfig, out: &Path, predictions: &Path, gt: &Path) -> Result<()> {
    let gt = GroundTruthSet::load(gt)?;
    let log = PredictionLog::load(predictions)?;
    let report = evaluate_log(&gt, &log, &eval_config(cfg))?;
    let run_dir = create_run_dir(out, cfg, "eval")?;
    std::fs::write(run_dir.join("report.json"), report.to_json())?;
    print!("{}", report.render());
    finish(&run_dir);
    Ok(())
}

fn bench_config(cfg: &RunConfig, mode: BenchMode, duration: f64) -> BenchConfig {
    BenchConfig {
        eval: eval_config(cfg),
        skip: cfg.skip,
        rate_cap: cfg.rate_cap,
        ..BenchConfig::new(mode, duration)
    }
}

fn cmd_bench(
    cfg: &RunConfig,
    out: &Path,
    mode: BenchMode,
    source_args: &SourceArgs,
    gt: Option<&Path>,
    duration: f64,
) -> Result<()> {
    let mut source = open_source(source_args, cfg.fps)?;
    let gt_dir = gt.or(source_args.input.as_deref());
    let gt = match mode {
        BenchMode::Idle => None,
        _ => Some(GroundTruthSet::load(gt_dir.ok_or_else(|| {
            Error::Config(format!("{} benchmark needs --gt", mode.name()))
        })?)?),
    };
    let clock = cfg.make_clock();
    let mut detector = cfg.pipeline(clock.clone())?;
    let outcome = run_benchmark(&mut detector, source.as_mut(), gt.as_ref(), clock.as_ref(), &bench_config(cfg, mode, duration))?;
    let run_dir = create_run_dir(out, cfg, "bench")?;
    std::fs::write(run_dir.join("report.json"), outcome.report.to_json())?;
    let mut log = jsonl_writer(&run_dir.join("predictions.jsonl"))?;
    for m in &outcome.predictions {
        write_line(&mut log, m)?;
    }
    log.flush()?;
    print!("{}", outcome.report.render());
    finish(&run_dir);
    Ok(())
}

fn with_detector(cfg: &RunConfig, spec: &str) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match spec.split_once('=') {
        None if spec == "geometric" => c.detector = DetectorKind::Geometric,
        Some(("scripted", path)) => {
            c.detector = DetectorKind::Scripted;
            c.script = Some(path.into());
        }
        Some(("external", url)) => {
            c.detector = DetectorKind::External;
            c.model_endpoint = url.into();
        }
        _ => {
            return Err(Error::Config(format!(
                "detector {spec:?} is not geometric, scripted=FILE or external=URL"
            )))
        }
    }
    Ok(c)
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    cfg: &RunConfig,
    out: &Path,
    a: &str,
    b: &str,
    input: &Path,
    gt: &Path,
    mode: BenchMode,
    duration: f64,
) -> Result<()> {
    if mode == BenchMode::Idle {
        return Err(Error::Config("compare needs a precision mode (static or dynamic)".into()));
    }
    let gt = GroundTruthSet::load(gt)?;
    let (ca, cb) = (with_detector(cfg, a)?, with_detector(cfg, b)?);
    let (clock_a, clock_b) = (ca.make_clock(), cb.make_clock());
    // both detectors must exist before anything is measured
    let mut da = ca.pipeline(clock_a.clone())?;
    let mut db = cb.pipeline(clock_b.clone())?;
    let bench = bench_config(cfg, mode, duration);
    let run = |d: &mut dyn Detector, clock: &dyn crate::scheduling::Clock, spec: &str| -> Result<_> {
        let mut source = ImageDirSource::open(input, cfg.fps)?;
        let mut report = run_benchmark(d, &mut source, Some(&gt), clock, &bench)?.report;
        report.detector = Some(spec.to_owned());
        Ok(report)
    };
    let ra = run(&mut da, clock_a.as_ref(), a)?;
    let rb = run(&mut db, clock_b.as_ref(), b)?;
    let cmp = Comparison::new(ra, rb);
    let run_dir = create_run_dir(out, cfg, "compare")?;
    std::fs::write(run_dir.join("comparison.json"), cmp.to_json())?;
    print!("{}", cmp.render());
    finish(&run_dir);
    Ok(())
}

fn cmd_model_server(cfg: &RunConfig, bind: SocketAddr, model_plane: bool) -> Result<()> {
    let clock = cfg.make_clock();
    let backend: Box<dyn Detector> = match (cfg.detector, model_plane) {
        (DetectorKind::Scripted, true) => {
            let path = cfg
                .script
                .as_deref()
                .ok_or_else(|| Error::Config("the scripted detector needs --script".into()))?;
            Box::new(
                crate::detector::ScriptedDetector::from_jsonl(path, cfg.class_map())?
                    .with_latency(cfg.latency_ms, clock)?
                    .with_input_size(Some(cfg.model_size)),
            )
        }
        (DetectorKind::External, _) => {
            return Err(Error::Config("model-server cannot relay to another external detector".into()))
        }
        _ => cfg.backend(clock)?,
    };
    let server = InferenceServer::spawn(bind, backend)?;
    eprintln!("inference server on {}", server.url());
    let stop = stop_flag();
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(50));
    }
    println!("{} requests served", server.served());
    server.shutdown();
    Ok(())
}
