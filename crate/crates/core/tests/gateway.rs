use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use hurovision::bridge::{
    listener_run, topic, Broker, DetectionMessage, GatewayConfig, GatewayServer, Link, Recv,
    ReconnectPolicy, WireDetection, TOPIC_BBOXES, TOPIC_DETECTIONS, TOPIC_OUTBOUND,
};
use hurovision::NormBox;

const WAIT: Duration = Duration::from_secs(5);

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn serve(broker: &Arc<Broker<DetectionMessage>>, port: u16) -> GatewayServer {
    let cfg = GatewayConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], port)),
        ..GatewayConfig::default()
    };
    GatewayServer::serve(broker.clone(), cfg).unwrap()
}

fn message(frame_id: u64) -> DetectionMessage {
    let d = WireDetection::new(
        (frame_id % 2) as u32,
        if frame_id.is_multiple_of(2) { "ball" } else { "basket" },
        0.123457 + frame_id as f64 * 1e-6,
        NormBox::new(0.25, 0.5, 0.1, 0.2).unwrap(),
    )
    .unwrap();
    DetectionMessage::new(frame_id, frame_id as f64 / 30.0, 640, 480, vec![d]).unwrap()
}

fn fast_policy() -> ReconnectPolicy {
    ReconnectPolicy {
        initial: Duration::from_millis(20),
        max: Duration::from_millis(200),
        max_attempts: None,
    }
}

fn next(link: &Link) -> DetectionMessage {
    match link.recv_timeout(WAIT) {
        Recv::Message(b) => hurovision::bridge::decode(&b).unwrap(),
        other => panic!("expected a frame, got {other:?}"),
    }
}

#[test]
fn loopback_preserves_messages() {
    let broker = Arc::new(Broker::new());
    let server = serve(&broker, 0);
    let link = Link::connect(&server.url(), fast_policy()).unwrap();
    assert!(server.wait_for_peers(1, WAIT));
    let out = topic(TOPIC_OUTBOUND);
    for i in 0..10 {
        broker.publish(&out, message(i)).unwrap();
    }
    for i in 0..10 {
        assert_eq!(next(&link), message(i));
    }
    assert!(server.flush(WAIT));
    assert_eq!(server.stats().frames_sent, 10);
    link.close();
    server.shutdown();
}

#[test]
fn client_frames_reach_egress_topic() {
    let broker = Arc::new(Broker::new());
    let server = serve(&broker, 0);
    let sub = broker.subscribe(&topic(TOPIC_BBOXES)).unwrap();
    let link = Link::connect(&server.url(), fast_policy()).unwrap();
    assert!(link.wait_connected(WAIT));
    link.send(&message(3)).unwrap();
    assert_eq!(sub.recv_timeout(WAIT), Recv::Message(message(3)));
    server.shutdown();
}

#[test]
fn malformed_frame_is_counted_and_link_survives() {
    let broker = Arc::new(Broker::new());
    let server = serve(&broker, 0);
    let sub = broker.subscribe(&topic(TOPIC_BBOXES)).unwrap();
    let (mut raw, _) = tungstenite::connect(server.url()).unwrap();
    raw.send(tungstenite::Message::text("{\"schema_version\":1,")).unwrap();
    raw.send(tungstenite::Message::text(hurovision::bridge::encode(&message(1)))).unwrap();
    assert_eq!(sub.recv_timeout(WAIT), Recv::Message(message(1)));
    let stats = server.stats();
    assert_eq!(stats.malformed, 1);
    assert_eq!(stats.peers, 1);
    raw.close(None).unwrap();
    server.shutdown();
}

#[test]
fn restart_recovers_without_replay() {
    let port = free_port();
    let broker = Arc::new(Broker::new());
    let server = serve(&broker, port);
    let link = Link::connect(&format!("ws://127.0.0.1:{port}"), ReconnectPolicy::default()).unwrap();
    assert!(server.wait_for_peers(1, WAIT));
    let out = topic(TOPIC_OUTBOUND);
    for i in 0..3 {
        broker.publish(&out, message(i)).unwrap();
        assert_eq!(next(&link), message(i));
    }
    server.shutdown();
    // published while no server exists: lost, never replayed
    let _ = broker.publish(&out, message(99));
    thread::sleep(Duration::from_millis(150));

    let broker2 = Arc::new(Broker::new());
    let server2 = serve(&broker2, port);
    assert!(server2.wait_for_peers(1, Duration::from_secs(10)));
    for i in 3..6 {
        broker2.publish(&out, message(i)).unwrap();
    }
    for i in 3..6 {
        assert_eq!(next(&link), message(i));
    }
    let stats = link.stats();
    assert_eq!(stats.connections, 2);
    assert!(stats.last_recovery_attempts <= 5, "{stats:?}");
    assert!(matches!(link.recv_timeout(Duration::from_millis(50)), Recv::Timeout));
    link.close();
    server2.shutdown();
}

#[test]
fn unreachable_endpoint_gives_up_after_max_attempts() {
    let port = free_port();
    let policy = ReconnectPolicy {
        initial: Duration::from_millis(5),
        max: Duration::from_millis(10),
        max_attempts: Some(3),
    };
    let link = Link::connect(&format!("ws://127.0.0.1:{port}"), policy).unwrap();
    assert!(!link.wait_connected(Duration::from_secs(5)));
    assert!(link.is_finished());
    assert_eq!(link.stats().failed_attempts, 3);
}

#[test]
fn listener_republishes_in_order_and_closes_topics() {
    let broker = Arc::new(Broker::new());
    let server = serve(&broker, 0);
    let bus = Arc::new(Broker::new());
    let detections = bus.clone();
    detections.ensure(&topic(TOPIC_DETECTIONS));
    let sub = bus.subscribe(&topic(TOPIC_DETECTIONS)).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let link = Link::connect(&server.url(), fast_policy()).unwrap();
    assert!(server.wait_for_peers(1, WAIT));
    let handle = {
        let (bus, stop) = (bus.clone(), stop.clone());
        thread::spawn(move || {
            let mut seen = Vec::new();
            let stats = listener_run(link, &bus, &stop, |m| seen.push(m.frame_id()));
            (stats, seen)
        })
    };
    let out = topic(TOPIC_OUTBOUND);
    for i in 0..5 {
        broker.publish(&out, message(i)).unwrap();
    }
    let got: Vec<u64> = (0..5)
        .map(|_| match sub.recv_timeout(WAIT) {
            Recv::Message(m) => m.frame_id(),
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(got, vec![0, 1, 2, 3, 4]);
    stop.store(true, std::sync::atomic::Ordering::SeqCst);
    let (stats, seen) = handle.join().unwrap();
    assert_eq!(stats.republished, 5);
    assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    assert_eq!(sub.recv_timeout(WAIT), Recv::Closed);
    assert!(server.wait_for_peers(0, WAIT));
    // peer count drops back once the link is gone
    let deadline = std::time::Instant::now() + WAIT;
    while server.stats().peers != 0 && std::time::Instant::now() < deadline {
        thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(server.stats().peers, 0);
    server.shutdown();
}

#[test]
fn listener_skips_malformed_frames() {
    let raw = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("ws://{}", raw.local_addr().unwrap());
    let server = thread::spawn(move || {
        let (stream, _) = raw.accept().unwrap();
        let mut ws = tungstenite::accept(stream).unwrap();
        let frames = [
            hurovision::bridge::encode(&message(0)),
            "not json".to_string(),
            hurovision::bridge::encode(&message(1)),
            "{\"schema_version\":1}".to_string(),
            hurovision::bridge::encode(&message(2)),
        ];
        for f in frames {
            ws.send(tungstenite::Message::text(f)).unwrap();
        }
        // keep the socket open until the client closes
        while ws.read().is_ok() {}
    });
    let bus = Broker::new();
    let stop = AtomicBool::new(false);
    let link = Link::connect(&url, fast_policy()).unwrap();
    let mut seen = Vec::new();
    let stats = listener_run(link, &bus, &stop, |m| {
        seen.push(m.frame_id());
        if seen.len() == 3 {
            stop.store(true, std::sync::atomic::Ordering::SeqCst);
        }
    });
    assert_eq!(seen, vec![0, 1, 2]);
    assert_eq!(stats.received, 5);
    assert_eq!(stats.malformed, 2);
    assert_eq!(stats.republished, 3);
    server.join().unwrap();
}
