//! WebSocket transport between the detection process and the listener process.
//!
//! The server forwards every message published on its ingress topic to all
//! connected peers as a text frame and publishes decoded inbound frames on its
//! egress topic. The client [`Link`] reconnects with exponential backoff and
//! hands raw frame payloads to its owner. Delivery is at-most-once: frames sent
//! while a peer is disconnected are lost, never replayed.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc as std_mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::runtime::Runtime;
use tokio::sync::{mpsc, watch};
use tokio_tungstenite::tungstenite::{Message, Utf8Bytes};

use super::broker::{Broker, Recv, Topic};
use super::message::{decode, encode, DetectionMessage};
use super::{TOPIC_BBOXES, TOPIC_OUTBOUND};
use crate::error::{Error, Result};

pub const DEFAULT_PORT: u16 = 8765;

fn runtime(name: &str) -> Result<Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .thread_name(name)
        .enable_all()
        .build()
        .map_err(|e| Error::Transport(format!("cannot start {name} runtime: {e}")))
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    /// Messages published here are sent to every peer.
    pub ingress: Topic,
    /// Decoded frames received from peers are published here.
    pub egress: Topic,
    /// Capacity of the gateway's own ingress subscription.
    pub queue_capacity: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            ingress: Topic::new(TOPIC_OUTBOUND).unwrap(),
            egress: Topic::new(TOPIC_BBOXES).unwrap(),
            queue_capacity: 1024,
        }
    }
}

#[derive(Debug, Default)]
struct ServerCounters {
    peers: AtomicUsize,
    connections: AtomicU64,
    published: AtomicU64,
    frames_sent: AtomicU64,
    frames_received: AtomicU64,
    malformed: AtomicU64,
    in_flight: AtomicUsize,
}

/// Snapshot of server-side traffic counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub peers: usize,
    pub connections: u64,
    pub published: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub malformed: u64,
}

type Peers = Arc<Mutex<Vec<(u64, mpsc::UnboundedSender<Utf8Bytes>)>>>;

pub struct GatewayServer {
    addr: SocketAddr,
    counters: Arc<ServerCounters>,
    shutdown: watch::Sender<bool>,
    stop_pump: Arc<AtomicBool>,
    pump: Option<JoinHandle<()>>,
    ingress_backlog: Arc<dyn Fn() -> usize + Send + Sync>,
    runtime: Option<Runtime>,
}

impl GatewayServer {
    /// Binds and starts serving. Bind failures are reported synchronously.
    pub fn serve(broker: Arc<Broker<DetectionMessage>>, cfg: GatewayConfig) -> Result<Self> {
        broker.ensure(&cfg.ingress);
        broker.ensure(&cfg.egress);
        let std_listener = std::net::TcpListener::bind(cfg.bind)
            .map_err(|e| Error::Transport(format!("cannot bind {}: {e}", cfg.bind)))?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let rt = runtime("gateway")?;
        let listener = {
            let _guard = rt.enter();
            TcpListener::from_std(std_listener)?
        };

        let counters = Arc::new(ServerCounters::default());
        let peers: Peers = Arc::new(Mutex::new(Vec::new()));
        let (shutdown, shutdown_rx) = watch::channel(false);

        {
            let (counters, peers, broker, egress) =
                (counters.clone(), peers.clone(), broker.clone(), cfg.egress.clone());
            let mut stop = shutdown_rx.clone();
            rt.spawn(async move {
                let mut next_id = 0u64;
                loop {
                    tokio::select! {
                        _ = stop.changed() => break,
                        res = listener.accept() => match res {
                            Ok((stream, peer)) => {
                                let _ = stream.set_nodelay(true);
                                next_id += 1;
                                tokio::spawn(handle_peer(
                                    stream, peer, next_id, broker.clone(), egress.clone(),
                                    peers.clone(), counters.clone(), stop.clone(),
                                ));
                            }
                            Err(e) => warn!("gateway accept failed: {e}"),
                        },
                    }
                }
                debug!("gateway accept loop stopped");
            });
        }

        let sub = Arc::new(broker.subscribe_with_capacity(&cfg.ingress, cfg.queue_capacity)?);
        let stop_pump = Arc::new(AtomicBool::new(false));
        let pump = {
            let (sub, stop, counters, peers) = (sub.clone(), stop_pump.clone(), counters.clone(), peers.clone());
            std::thread::Builder::new()
                .name("gateway-pump".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match sub.recv_timeout(Duration::from_millis(20)) {
                            Recv::Message(m) => {
                                counters.in_flight.fetch_add(1, Ordering::SeqCst);
                                let text: Utf8Bytes = encode(&m).into();
                                counters.published.fetch_add(1, Ordering::Relaxed);
                                let mut peers = peers.lock().unwrap();
                                peers.retain(|(_, tx)| {
                                    counters.in_flight.fetch_add(1, Ordering::SeqCst);
                                    let ok = tx.send(text.clone()).is_ok();
                                    if !ok {
                                        counters.in_flight.fetch_sub(1, Ordering::SeqCst);
                                    }
                                    ok
                                });
                                drop(peers);
                                counters.in_flight.fetch_sub(1, Ordering::SeqCst);
                            }
                            Recv::Timeout => {}
                            Recv::Closed => break,
                        }
                    }
                })?
        };
        info!("gateway listening on ws://{addr}");
        Ok(Self {
            addr,
            counters,
            shutdown,
            stop_pump,
            pump: Some(pump),
            ingress_backlog: Arc::new(move || sub.len()),
            runtime: Some(rt),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            peers: c.peers.load(Ordering::SeqCst),
            connections: c.connections.load(Ordering::SeqCst),
            published: c.published.load(Ordering::SeqCst),
            frames_sent: c.frames_sent.load(Ordering::SeqCst),
            frames_received: c.frames_received.load(Ordering::SeqCst),
            malformed: c.malformed.load(Ordering::SeqCst),
        }
    }

    /// Waits until at least `n` peers are connected.
    pub fn wait_for_peers(&self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.counters.peers.load(Ordering::SeqCst) < n {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        true
    }

    /// Waits until everything published so far has been written to the peers.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut quiet = 0;
        while quiet < 2 {
            if Instant::now() >= deadline {
                return false;
            }
            let idle = (self.ingress_backlog)() == 0 && self.counters.in_flight.load(Ordering::SeqCst) == 0;
            quiet = if idle { quiet + 1 } else { 0 };
            std::thread::sleep(Duration::from_millis(5));
        }
        true
    }

    /// Closes every peer connection and the listening socket.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.shutdown.send(true);
        self.stop_pump.store(true, Ordering::SeqCst);
        if let Some(p) = self.pump.take() {
            let _ = p.join();
        }
        if let Some(rt) = self.runtime.take() {
            // give peers a moment to receive the close frame
            std::thread::sleep(Duration::from_millis(20));
            rt.shutdown_timeout(Duration::from_secs(2));
            info!("gateway on {} stopped", self.addr);
        }
    }
}

impl Drop for GatewayServer {
    fn drop(&mut self) {
        self.stop();
    }
}

#[allow(clippy::too_many_arguments)]
async fn handle_peer(
    stream: tokio::net::TcpStream,
    peer: SocketAddr,
    id: u64,
    broker: Arc<Broker<DetectionMessage>>,
    egress: Topic,
    peers: Peers,
    counters: Arc<ServerCounters>,
    mut stop: watch::Receiver<bool>,
) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            warn!("handshake with {peer} failed: {e}");
            return;
        }
    };
    let (tx, mut rx) = mpsc::unbounded_channel();
    peers.lock().unwrap().push((id, tx));
    counters.peers.fetch_add(1, Ordering::SeqCst);
    counters.connections.fetch_add(1, Ordering::SeqCst);
    info!("peer {peer} connected");
    let (mut sink, mut source) = ws.split();
    loop {
        tokio::select! {
            _ = stop.changed() => {
                let _ = sink.send(Message::Close(None)).await;
                break;
            }
            Some(text) = rx.recv() => {
                let res = sink.send(Message::Text(text)).await;
                counters.in_flight.fetch_sub(1, Ordering::SeqCst);
                if let Err(e) = res {
                    warn!("send to {peer} failed: {e}");
                    break;
                }
                counters.frames_sent.fetch_add(1, Ordering::Relaxed);
            }
            frame = source.next() => match frame {
                Some(Ok(Message::Text(t))) => {
                    counters.frames_received.fetch_add(1, Ordering::Relaxed);
                    match decode(t.as_bytes()) {
                        Ok(m) => {
                            let _ = broker.publish(&egress, m);
                        }
                        Err(e) => {
                            counters.malformed.fetch_add(1, Ordering::Relaxed);
                            warn!("dropping malformed frame from {peer}: {e}");
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    counters.malformed.fetch_add(1, Ordering::Relaxed);
                    warn!("dropping binary frame from {peer}");
                }
                Some(Ok(Message::Close(_))) | None => break,
                Some(Err(e)) => {
                    warn!("connection to {peer} failed: {e}");
                    break;
                }
                Some(Ok(_)) => {}
            },
        }
    }
    peers.lock().unwrap().retain(|(i, _)| *i != id);
    // frames still queued for this peer are abandoned
    while rx.try_recv().is_ok() {
        counters.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
    counters.peers.fetch_sub(1, Ordering::SeqCst);
    info!("peer {peer} disconnected");
}

/// Exponential backoff between connection attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconnectPolicy {
    pub initial: Duration,
    pub max: Duration,
    /// Give up after this many consecutive failed attempts.
    pub max_attempts: Option<u32>,
}

impl Default for ReconnectPolicy {
    fn default() -> Self {
        Self {
            initial: Duration::from_millis(100),
            max: Duration::from_secs(5),
            max_attempts: None,
        }
    }
}

impl ReconnectPolicy {
    /// Wait before the next attempt after `failures` consecutive failures.
    pub fn delay(&self, failures: u32) -> Duration {
        let factor = 2u32.saturating_pow(failures.min(31));
        self.initial.saturating_mul(factor).min(self.max)
    }
}

#[derive(Debug, Default)]
struct LinkCounters {
    connected: AtomicBool,
    connections: AtomicU64,
    failed_attempts: AtomicU64,
    last_recovery_attempts: AtomicU64,
    frames_received: AtomicU64,
    frames_sent: AtomicU64,
    finished: AtomicBool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub connected: bool,
    /// Successful connections, including the first.
    pub connections: u64,
    pub failed_attempts: u64,
    /// Attempts (including the successful one) needed for the latest connection.
    pub last_recovery_attempts: u64,
    pub frames_received: u64,
    pub frames_sent: u64,
}

/// Client side of the gateway. Owns a background connection loop.
pub struct Link {
    url: String,
    incoming: std_mpsc::Receiver<Vec<u8>>,
    outgoing: mpsc::UnboundedSender<Utf8Bytes>,
    counters: Arc<LinkCounters>,
    shutdown: watch::Sender<bool>,
    runtime: Option<Runtime>,
}

impl Link {
    /// Starts connecting to `url` (e.g. `ws://127.0.0.1:8765`). Never fails
    /// because the server is down; the loop keeps retrying per `policy`.
    pub fn connect(url: &str, policy: ReconnectPolicy) -> Result<Self> {
        if !url.starts_with("ws://") {
            return Err(Error::Config(format!("endpoint {url:?} must start with ws://")));
        }
        let rt = runtime("link")?;
        let (in_tx, incoming) = std_mpsc::channel();
        let (outgoing, out_rx) = mpsc::unbounded_channel();
        let (shutdown, shutdown_rx) = watch::channel(false);
        let counters = Arc::new(LinkCounters::default());
        rt.spawn(run_link(url.to_owned(), policy, in_tx, out_rx, counters.clone(), shutdown_rx));
        Ok(Self {
            url: url.to_owned(),
            incoming,
            outgoing,
            counters,
            shutdown,
            runtime: Some(rt),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Next raw frame payload.
    pub fn recv_timeout(&self, timeout: Duration) -> Recv<Vec<u8>> {
        match self.incoming.recv_timeout(timeout) {
            Ok(b) => Recv::Message(b),
            Err(std_mpsc::RecvTimeoutError::Timeout) => Recv::Timeout,
            Err(std_mpsc::RecvTimeoutError::Disconnected) => Recv::Closed,
        }
    }

    /// Queues a message for the server. Dropped if not connected when sent.
    pub fn send(&self, m: &DetectionMessage) -> Result<()> {
        self.outgoing
            .send(encode(m).into())
            .map_err(|_| Error::Transport("link closed".into()))
    }

    /// Sends a raw text frame.
    pub fn send_text(&self, text: impl Into<String>) -> Result<()> {
        self.outgoing
            .send(text.into().into())
            .map_err(|_| Error::Transport("link closed".into()))
    }

    pub fn is_connected(&self) -> bool {
        self.counters.connected.load(Ordering::SeqCst)
    }

    /// True once the connection loop gave up or was shut down.
    pub fn is_finished(&self) -> bool {
        self.counters.finished.load(Ordering::SeqCst)
    }

    pub fn wait_connected(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while !self.is_connected() {
            if Instant::now() >= deadline || self.is_finished() {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        true
    }

    pub fn stats(&self) -> LinkStats {
        let c = &self.counters;
        LinkStats {
            connected: c.connected.load(Ordering::SeqCst),
            connections: c.connections.load(Ordering::SeqCst),
            failed_attempts: c.failed_attempts.load(Ordering::SeqCst),
            last_recovery_attempts: c.last_recovery_attempts.load(Ordering::SeqCst),
            frames_received: c.frames_received.load(Ordering::SeqCst),
            frames_sent: c.frames_sent.load(Ordering::SeqCst),
        }
    }

    pub fn close(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.shutdown.send(true);
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_timeout(Duration::from_secs(2));
            self.counters.connected.store(false, Ordering::SeqCst);
            self.counters.finished.store(true, Ordering::SeqCst);
            info!("link to {} closed", self.url);
        }
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        self.stop();
    }
}

enum SessionEnd {
    Shutdown,
    Lost,
}

async fn run_link(
    url: String,
    policy: ReconnectPolicy,
    in_tx: std_mpsc::Sender<Vec<u8>>,
    mut out_rx: mpsc::UnboundedReceiver<Utf8Bytes>,
    counters: Arc<LinkCounters>,
    mut stop: watch::Receiver<bool>,
) {
    let mut failures = 0u32;
    loop {
        if *stop.borrow() {
            break;
        }
        let attempt = tokio::select! {
            r = tokio_tungstenite::connect_async_with_config(url.as_str(), None, true) => r,
            _ = stop.changed() => break,
        };
        match attempt {
            Ok((ws, _)) => {
                counters.connections.fetch_add(1, Ordering::SeqCst);
                counters.last_recovery_attempts.store(failures as u64 + 1, Ordering::SeqCst);
                failures = 0;
                // stale outbound frames from before the connection are discarded
                while out_rx.try_recv().is_ok() {}
                counters.connected.store(true, Ordering::SeqCst);
                info!("connected to {url}");
                let end = session(ws, &in_tx, &mut out_rx, &counters, &mut stop).await;
                counters.connected.store(false, Ordering::SeqCst);
                match end {
                    SessionEnd::Shutdown => break,
                    SessionEnd::Lost => warn!("connection to {url} lost, reconnecting"),
                }
            }
            Err(e) => {
                failures += 1;
                counters.failed_attempts.fetch_add(1, Ordering::SeqCst);
                warn!("connect to {url} failed (attempt {failures}): {e}");
                if policy.max_attempts.is_some_and(|m| failures >= m) {
                    warn!("giving up on {url} after {failures} attempts");
                    break;
                }
            }
        }
        let delay = policy.delay(failures);
        debug!("next connection attempt to {url} in {delay:?}");
        tokio::select! {
            _ = tokio::time::sleep(delay) => {}
            _ = stop.changed() => break,
        }
    }
    counters.connected.store(false, Ordering::SeqCst);
    counters.finished.store(true, Ordering::SeqCst);
}

async fn session(
    ws: tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
    in_tx: &std_mpsc::Sender<Vec<u8>>,
    out_rx: &mut mpsc::UnboundedReceiver<Utf8Bytes>,
    counters: &LinkCounters,
    stop: &mut watch::Receiver<bool>,
) -> SessionEnd {
    let (mut sink, mut source) = ws.split();
    loop {
        tokio::select! {
            _ = stop.changed() => {
                let _ = sink.send(Message::Close(None)).await;
                return SessionEnd::Shutdown;
            }
            Some(text) = out_rx.recv() => {
                if sink.send(Message::Text(text)).await.is_err() {
                    return SessionEnd::Lost;
                }
                counters.frames_sent.fetch_add(1, Ordering::Relaxed);
            }
            frame = source.next() => {
                let payload = match frame {
                    Some(Ok(Message::Text(t))) => t.as_bytes().to_vec(),
                    Some(Ok(Message::Binary(b))) => b.to_vec(),
                    Some(Ok(Message::Close(_))) | None => return SessionEnd::Lost,
                    Some(Err(e)) => {
                        debug!("read failed: {e}");
                        return SessionEnd::Lost;
                    }
                    Some(Ok(_)) => continue,
                };
                counters.frames_received.fetch_add(1, Ordering::Relaxed);
                if in_tx.send(payload).is_err() {
                    return SessionEnd::Shutdown;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = ReconnectPolicy::default();
        let ms: Vec<u128> = (0..8).map(|k| p.delay(k).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 800, 1600, 3200, 5000, 5000]);
        assert_eq!(p.delay(1000), Duration::from_secs(5));
    }

    #[test]
    fn link_rejects_non_websocket_urls() {
        assert!(matches!(
            Link::connect("http://localhost:1", ReconnectPolicy::default()),
            Err(Error::Config(_))
        ));
    }
}
