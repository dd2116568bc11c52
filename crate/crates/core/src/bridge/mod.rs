//! Moving detections between processes: the wire format, an in-process topic
//! bus, the WebSocket gateway and the listener that republishes onto topics.

pub mod broker;
pub mod gateway;
pub mod message;

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use log::{debug, info, warn};
use serde::Serialize;

pub use broker::{Broker, Recv, Subscription, Topic, DEFAULT_QUEUE_CAPACITY};
pub use gateway::{GatewayConfig, GatewayServer, GatewayStats, Link, LinkStats, ReconnectPolicy, DEFAULT_PORT};
pub use message::{decode, encode, read_jsonl, write_jsonl, DetectionMessage, WireDetection, SCHEMA_VERSION};

/// Messages received from the detection process.
pub const TOPIC_BBOXES: &str = "/yolo/bboxes";
/// What downstream behavior nodes subscribe to.
pub const TOPIC_DETECTIONS: &str = "/yolo/detections";
/// Serve-side topic whose messages the gateway sends to peers.
pub const TOPIC_OUTBOUND: &str = "/yolo/outbound";

pub fn topic(name: &str) -> Topic {
    Topic::new(name).expect("static topic name")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ListenerStats {
    pub received: u64,
    pub republished: u64,
    pub malformed: u64,
}

/// Decodes every frame arriving on `link` and republishes it on
/// `/yolo/bboxes` and `/yolo/detections` until `shutdown` is set or the link
/// gives up. `on_message` sees each message after it was published.
///
/// On return the link is closed and both topics' subscriber queues are
/// closed, so consumers blocked on them wake up.
pub fn listener_run(
    link: Link,
    broker: &Broker<DetectionMessage>,
    shutdown: &AtomicBool,
    mut on_message: impl FnMut(&DetectionMessage),
) -> ListenerStats {
    let bboxes = topic(TOPIC_BBOXES);
    let detections = topic(TOPIC_DETECTIONS);
    broker.ensure(&bboxes);
    broker.ensure(&detections);
    let mut stats = ListenerStats::default();
    info!("listener attached to {}", link.url());
    while !shutdown.load(Ordering::SeqCst) {
        let bytes = match link.recv_timeout(Duration::from_millis(20)) {
            Recv::Message(b) => b,
            Recv::Timeout => {
                if link.is_finished() {
                    warn!("link to {} gave up", link.url());
                    break;
                }
                continue;
            }
            Recv::Closed => break,
        };
        stats.received += 1;
        match decode(&bytes) {
            Ok(m) => {
                debug!("frame {} with {} detections", m.frame_id(), m.detections().len());
                let _ = broker.publish(&bboxes, m.clone());
                let _ = broker.publish(&detections, m.clone());
                stats.republished += 1;
                on_message(&m);
            }
            Err(e) => {
                stats.malformed += 1;
                warn!("skipping undecodable frame: {e}");
            }
        }
    }
    link.close();
    let _ = broker.close_topic(&bboxes);
    let _ = broker.close_topic(&detections);
    info!(
        "listener stopped: {} received, {} republished, {} malformed",
        stats.received, stats.republished, stats.malformed
    );
    stats
}
