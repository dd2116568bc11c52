//! Shutdown must release every thread and socket. Kept in its own test
//! binary so no other test's threads skew the counts.
#![cfg(target_os = "linux")]

use std::net::SocketAddr;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use hurovision::bridge::{
    listener_run, topic, Broker, DetectionMessage, GatewayConfig, GatewayServer, Link, ReconnectPolicy,
    TOPIC_OUTBOUND,
};

fn threads() -> usize {
    std::fs::read_dir("/proc/self/task").unwrap().count()
}

fn fds() -> usize {
    std::fs::read_dir("/proc/self/fd").unwrap().count()
}

/// Waits for the counts to come back down; teardown is asynchronous.
fn settles_to(threads0: usize, fds0: usize) -> (usize, usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let now = (threads(), fds());
        if (now.0 <= threads0 && now.1 <= fds0) || Instant::now() > deadline {
            return now;
        }
        thread::sleep(Duration::from_millis(20));
    }
}

fn cycle(messages: u64) {
    let broker = Arc::new(Broker::new());
    let server = GatewayServer::serve(
        broker.clone(),
        GatewayConfig { bind: SocketAddr::from(([127, 0, 0, 1], 0)), ..GatewayConfig::default() },
    )
    .unwrap();
    let link = Link::connect(&server.url(), ReconnectPolicy::default()).unwrap();
    assert!(server.wait_for_peers(1, Duration::from_secs(5)));
    let stop = Arc::new(AtomicBool::new(false));
    let bus: Broker<DetectionMessage> = Broker::new();
    let detections = topic(hurovision::bridge::TOPIC_DETECTIONS);
    bus.ensure(&detections);
    let sub = bus.subscribe_with_capacity(&detections, 64).unwrap();
    let listener = {
        let stop = stop.clone();
        thread::spawn(move || listener_run(link, &bus, &stop, |_| {}))
    };
    let out = topic(TOPIC_OUTBOUND);
    for f in 0..messages {
        broker.publish(&out, DetectionMessage::new(f, 0.0, 8, 8, vec![]).unwrap()).unwrap();
    }
    for i in 0..messages {
        let r = sub.recv_timeout(Duration::from_secs(5));
        assert!(matches!(r, hurovision::bridge::Recv::Message(_)), "message {i}: {r:?}");
    }
    server.shutdown();
    stop.store(true, std::sync::atomic::Ordering::SeqCst);
    let stats = listener.join().unwrap();
    assert_eq!(stats.republished, messages);
}

#[test]
fn gateway_and_listener_release_threads_and_sockets() {
    // warm up lazily initialized process state
    cycle(2);
    thread::sleep(Duration::from_millis(300));
    let (t0, f0) = (threads(), fds());
    for _ in 0..5 {
        cycle(20);
    }
    let (t1, f1) = settles_to(t0, f0);
    assert!(t1 <= t0, "threads {t0} -> {t1}");
    assert!(f1 <= f0, "fds {f0} -> {f1}");
}
