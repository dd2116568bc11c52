//! Out-of-process inference over WebSocket.
//!
//! Requests are JSON text frames: `{"op":"probe"}` answered by
//! `{"op":"descriptor","name","labels","input_size","latency_ms"}`, and
//! `{"op":"detect","frame_id","timestamp","width","height","rgb"}` (base64
//! RGB bytes) answered by a detection message. Failures come back as
//! `{"op":"error","message"}`.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use log::{debug, info, warn};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::{self, http::Uri, Message, WebSocket};

use super::{check_frame, Descriptor, Detector};
use crate::bridge::message::{decode_value, encode, DetectionMessage};
use crate::error::{Error, Result};
use crate::preprocess::Image;
use crate::types::{ClassMap, DetectionSet, FrameMeta};

/// Client of a remote inference server. Requests are strictly sequential on
/// one connection, which is reopened after any failure.
pub struct ExternalDetector {
    url: String,
    addr: SocketAddr,
    timeout: Duration,
    conn: Option<WebSocket<TcpStream>>,
    descriptor: Descriptor,
}

fn resolve(url: &str) -> Result<SocketAddr> {
    let uri: Uri = url
        .parse()
        .map_err(|e| Error::Config(format!("bad endpoint {url:?}: {e}")))?;
    if uri.scheme_str() != Some("ws") {
        return Err(Error::Config(format!("endpoint {url:?} must start with ws://")));
    }
    let host = uri
        .host()
        .ok_or_else(|| Error::Config(format!("endpoint {url:?} has no host")))?;
    let port = uri.port_u16().unwrap_or(80);
    (host, port)
        .to_socket_addrs()
        .map_err(|e| Error::DetectorUnavailable(format!("cannot resolve {url}: {e}")))?
        .next()
        .ok_or_else(|| Error::DetectorUnavailable(format!("cannot resolve {url}")))
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

impl ExternalDetector {
    /// Connects and probes the server for its descriptor.
    pub fn connect(url: &str, timeout: Duration) -> Result<Self> {
        let addr = resolve(url)?;
        let mut d = Self {
            url: url.to_owned(),
            addr,
            timeout,
            conn: None,
            descriptor: Descriptor {
                name: "external".into(),
                class_map: ClassMap::new(["unknown"])?,
                input_size: None,
                latency_ms: 0.0,
            },
        };
        d.probe()?;
        Ok(d)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn timeout_ms(&self) -> u64 {
        self.timeout.as_millis() as u64
    }

    fn open(&mut self) -> Result<&mut WebSocket<TcpStream>> {
        if self.conn.is_none() {
            let stream = TcpStream::connect_timeout(&self.addr, self.timeout).map_err(|e| {
                if is_timeout(&e) {
                    Error::Timeout(self.timeout_ms())
                } else {
                    Error::DetectorUnavailable(format!("{}: {e}", self.url))
                }
            })?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(self.timeout))?;
            stream.set_write_timeout(Some(self.timeout))?;
            let ms = self.timeout_ms();
            // a read timeout mid-handshake surfaces as an interrupted handshake
            let (ws, _) = tungstenite::client(self.url.as_str(), stream).map_err(|e| match e {
                tungstenite::HandshakeError::Interrupted(_) => Error::Timeout(ms),
                tungstenite::HandshakeError::Failure(tungstenite::Error::Io(io)) if is_timeout(&io) => {
                    Error::Timeout(ms)
                }
                e => Error::DetectorUnavailable(format!("handshake with {} failed: {e}", self.url)),
            })?;
            debug!("connected to inference server {}", self.url);
            self.conn = Some(ws);
        }
        Ok(self.conn.as_mut().expect("just opened"))
    }

    fn exchange(&mut self, request: String) -> Result<Value> {
        let res = self.exchange_inner(request);
        if res.is_err() {
            self.conn = None;
        }
        res
    }

    fn exchange_inner(&mut self, request: String) -> Result<Value> {
        let deadline = Instant::now() + self.timeout;
        let (url, ms) = (self.url.clone(), self.timeout_ms());
        let ws = self.open()?;
        let transport = |e: tungstenite::Error| match e {
            tungstenite::Error::Io(io) if is_timeout(&io) => Error::Timeout(ms),
            other => Error::DetectorUnavailable(format!("{url}: {other}")),
        };
        ws.send(Message::text(request)).map_err(transport)?;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(Error::Timeout(ms));
            }
            ws.get_mut().set_read_timeout(Some(left))?;
            match ws.read().map_err(transport)? {
                Message::Text(t) => {
                    let v: Value =
                        serde_json::from_str(t.as_str()).map_err(|e| Error::Parse(e.to_string()))?;
                    if v.get("op").and_then(Value::as_str) == Some("error") {
                        let msg = v.get("message").and_then(Value::as_str).unwrap_or("unspecified");
                        return Err(Error::DetectorUnavailable(format!("server error: {msg}")));
                    }
                    return Ok(v);
                }
                Message::Close(_) => {
                    return Err(Error::DetectorUnavailable(format!("{url} closed the connection")))
                }
                _ => {}
            }
        }
    }
}

fn parse_descriptor(v: &Value) -> Result<Descriptor> {
    let bad = |what: &str| Error::validation(what, "missing or malformed in descriptor reply");
    if v.get("op").and_then(Value::as_str) != Some("descriptor") {
        return Err(bad("op"));
    }
    let name = v.get("name").and_then(Value::as_str).ok_or_else(|| bad("name"))?;
    let labels = v
        .get("labels")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("labels"))?
        .iter()
        .map(|l| l.as_str().map(str::to_owned).ok_or_else(|| bad("labels")))
        .collect::<Result<Vec<_>>>()?;
    let input_size = match v.get("input_size") {
        None | Some(Value::Null) => None,
        Some(n) => Some(
            n.as_u64()
                .filter(|&n| n > 0 && n <= u32::MAX as u64)
                .ok_or_else(|| bad("input_size"))? as u32,
        ),
    };
    let latency_ms = v.get("latency_ms").and_then(Value::as_f64).unwrap_or(0.0);
    Ok(Descriptor {
        name: name.to_owned(),
        class_map: ClassMap::new(labels)?,
        input_size,
        latency_ms,
    })
}

impl Detector for ExternalDetector {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn probe(&mut self) -> Result<Descriptor> {
        let v = self.exchange(json!({"op": "probe"}).to_string())?;
        self.descriptor = parse_descriptor(&v)?;
        Ok(self.descriptor.clone())
    }

    fn detect(&mut self, img: &Image, meta: &FrameMeta) -> Result<DetectionSet> {
        check_frame(img, meta)?;
        let req = json!({
            "op": "detect",
            "frame_id": meta.frame_id,
            "timestamp": meta.timestamp,
            "width": meta.width,
            "height": meta.height,
            "rgb": STANDARD.encode(img.data()),
        });
        let v = self.exchange(req.to_string())?;
        let m = decode_value(&v)?;
        if m.frame_id() != meta.frame_id {
            return Err(Error::validation(
                "frame_id",
                format!("reply for frame {} to request for frame {}", m.frame_id(), meta.frame_id),
            ));
        }
        if (m.frame_w(), m.frame_h()) != (meta.width, meta.height) {
            return Err(Error::validation("frame_w", "reply frame size differs from the request"));
        }
        m.check_classes(&self.descriptor.class_map)?;
        let set = m.to_set_with_size(meta.width, meta.height)?;
        DetectionSet::new(*meta, set.into_detections())
    }
}

/// Serves any [`Detector`] over the external protocol. Connections are
/// handled one at a time on a single thread.
pub struct InferenceServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

const POLL: Duration = Duration::from_millis(20);

impl InferenceServer {
    pub fn spawn(bind: SocketAddr, mut detector: Box<dyn Detector>) -> Result<Self> {
        let listener = TcpListener::bind(bind)
            .map_err(|e| Error::Transport(format!("cannot bind {bind}: {e}")))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicU64::new(0));
        let handle = {
            let (stop, served) = (stop.clone(), served.clone());
            std::thread::Builder::new()
                .name("inference-server".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match listener.accept() {
                            Ok((stream, peer)) => {
                                info!("inference client {peer} connected");
                                if let Err(e) = serve_connection(stream, &mut *detector, &stop, &served) {
                                    warn!("inference client {peer}: {e}");
                                }
                                info!("inference client {peer} disconnected");
                            }
                            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                            Err(e) => warn!("accept failed: {e}"),
                        }
                    }
                })?
        };
        info!("inference server listening on ws://{addr}");
        Ok(Self {
            addr,
            stop,
            served,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Requests answered so far.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for InferenceServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_connection(
    stream: TcpStream,
    detector: &mut dyn Detector,
    stop: &AtomicBool,
    served: &AtomicU64,
) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws = tungstenite::accept(stream)
        .map_err(|e| Error::Transport(format!("handshake failed: {e}")))?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                let reply = answer(t.as_str(), detector);
                served.fetch_add(1, Ordering::SeqCst);
                ws.send(Message::text(reply))
                    .map_err(|e| Error::Transport(e.to_string()))?;
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(Error::Transport(e.to_string())),
        }
    }
}

fn answer(text: &str, detector: &mut dyn Detector) -> String {
    match handle_request(text, detector) {
        Ok(reply) => reply,
        Err(e) => json!({"op": "error", "message": e.to_string()}).to_string(),
    }
}

fn handle_request(text: &str, detector: &mut dyn Detector) -> Result<String> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let field = |k: &str| v.get(k).ok_or_else(|| Error::validation(k, "missing"));
    match v.get("op").and_then(Value::as_str) {
        Some("probe") => {
            let d = detector.probe()?;
            Ok(json!({
                "op": "descriptor",
                "name": d.name,
                "labels": d.class_map.labels(),
                "input_size": d.input_size,
                "latency_ms": d.latency_ms,
            })
            .to_string())
        }
        Some("detect") => {
            let num = |k: &str| {
                field(k)?
                    .as_u64()
                    .ok_or_else(|| Error::validation(k, "expected a non-negative integer"))
            };
            let (w, h) = (num("width")? as u32, num("height")? as u32);
            let timestamp = field("timestamp")?
                .as_f64()
                .ok_or_else(|| Error::validation("timestamp", "expected a number"))?;
            let rgb = STANDARD
                .decode(field("rgb")?.as_str().unwrap_or_default())
                .map_err(|e| Error::validation("rgb", e.to_string()))?;
            let meta = FrameMeta::new(num("frame_id")?, timestamp, w, h)?;
            let img = Image::new(w, h, rgb)?;
            let set = detector.detect(&img, &meta)?;
            Ok(encode(&DetectionMessage::from_set(&set)?))
        }
        _ => Err(Error::validation("op", "expected \"probe\" or \"detect\"")),
    }
}
