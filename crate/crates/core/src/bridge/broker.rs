//! In-process topic bus with bounded, drop-oldest subscriber queues.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, RwLock, Weak};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub const DEFAULT_QUEUE_CAPACITY: usize = 16;

/// Validated topic name: non-empty and rooted at `/`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topic(String);

impl Topic {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.len() < 2 || !name.starts_with('/') || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "topic {name:?} must be a slash-rooted path"
            )));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Topic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug)]
struct QueueState<M> {
    items: VecDeque<M>,
    dropped: u64,
    closed: bool,
}

#[derive(Debug)]
struct Queue<M> {
    capacity: usize,
    state: Mutex<QueueState<M>>,
    ready: Condvar,
}

impl<M> Queue<M> {
    fn push(&self, m: M) -> bool {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return false;
        }
        if s.items.len() == self.capacity {
            s.items.pop_front();
            s.dropped += 1;
        }
        s.items.push_back(m);
        drop(s);
        self.ready.notify_one();
        true
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

#[derive(Debug)]
struct TopicState<M> {
    subscribers: Mutex<Vec<Weak<Queue<M>>>>,
}

/// Outcome of a blocking receive.
#[derive(Debug, Clone, PartialEq)]
pub enum Recv<M> {
    Message(M),
    Timeout,
    Closed,
}

/// Receiving end of one subscription. Single consumer.
#[derive(Debug)]
pub struct Subscription<M> {
    topic: Topic,
    queue: Arc<Queue<M>>,
}

impl<M> Subscription<M> {
    pub fn topic(&self) -> &Topic {
        &self.topic
    }

    pub fn try_recv(&self) -> Option<M> {
        self.queue.state.lock().unwrap().items.pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Recv<M> {
        let deadline = Instant::now() + timeout;
        let mut s = self.queue.state.lock().unwrap();
        loop {
            if let Some(m) = s.items.pop_front() {
                return Recv::Message(m);
            }
            if s.closed {
                return Recv::Closed;
            }
            let now = Instant::now();
            if now >= deadline {
                return Recv::Timeout;
            }
            s = self.queue.ready.wait_timeout(s, deadline - now).unwrap().0;
        }
    }

    /// Messages discarded because the queue was full.
    pub fn dropped(&self) -> u64 {
        self.queue.state.lock().unwrap().dropped
    }

    pub fn len(&self) -> usize {
        self.queue.state.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.queue.state.lock().unwrap().closed
    }
}

impl<M> Iterator for Subscription<M> {
    type Item = M;

    /// Drains what is queued right now without blocking.
    fn next(&mut self) -> Option<M> {
        self.try_recv()
    }
}

/// Thread-safe publish/subscribe bus. `publish` never waits on a consumer.
#[derive(Debug)]
pub struct Broker<M> {
    topics: RwLock<HashMap<String, Arc<TopicState<M>>>>,
    capacity: usize,
}

impl<M: Clone> Broker<M> {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_QUEUE_CAPACITY)
    }

    /// Broker whose subscriptions default to `capacity` queued messages.
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            topics: RwLock::new(HashMap::new()),
            capacity: capacity.max(1),
        }
    }

    /// Registers a topic; registering an existing name is an error.
    pub fn register(&self, topic: &Topic) -> Result<()> {
        let mut t = self.topics.write().unwrap();
        if t.contains_key(topic.as_str()) {
            return Err(Error::InvalidArgument(format!("topic {topic} already registered")));
        }
        t.insert(topic.as_str().to_owned(), Arc::new(TopicState { subscribers: Mutex::new(Vec::new()) }));
        Ok(())
    }

    /// Registers the topic unless it already exists.
    pub fn ensure(&self, topic: &Topic) {
        let mut t = self.topics.write().unwrap();
        t.entry(topic.as_str().to_owned())
            .or_insert_with(|| Arc::new(TopicState { subscribers: Mutex::new(Vec::new()) }));
    }

    pub fn has_topic(&self, topic: &Topic) -> bool {
        self.topics.read().unwrap().contains_key(topic.as_str())
    }

    fn state(&self, topic: &Topic) -> Result<Arc<TopicState<M>>> {
        self.topics
            .read()
            .unwrap()
            .get(topic.as_str())
            .cloned()
            .ok_or_else(|| Error::NoSuchTopic(topic.to_string()))
    }

    pub fn subscribe(&self, topic: &Topic) -> Result<Subscription<M>> {
        self.subscribe_with_capacity(topic, self.capacity)
    }

    pub fn subscribe_with_capacity(&self, topic: &Topic, capacity: usize) -> Result<Subscription<M>> {
        let state = self.state(topic)?;
        let queue = Arc::new(Queue {
            capacity: capacity.max(1),
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                dropped: 0,
                closed: false,
            }),
            ready: Condvar::new(),
        });
        state.subscribers.lock().unwrap().push(Arc::downgrade(&queue));
        Ok(Subscription {
            topic: topic.clone(),
            queue,
        })
    }

    /// Appends `m` to every live subscriber queue and returns how many took it.
    pub fn publish(&self, topic: &Topic, m: M) -> Result<usize> {
        let state = self.state(topic)?;
        let mut subs = state.subscribers.lock().unwrap();
        let mut accepted = 0;
        subs.retain(|w| match w.upgrade() {
            Some(q) => {
                accepted += q.push(m.clone()) as usize;
                true
            }
            None => false,
        });
        Ok(accepted)
    }

    /// Closes every subscriber queue of `topic`. Queued messages stay readable.
    pub fn close_topic(&self, topic: &Topic) -> Result<()> {
        let state = self.state(topic)?;
        for q in state.subscribers.lock().unwrap().drain(..).filter_map(|w| w.upgrade()) {
            q.close();
        }
        Ok(())
    }

    pub fn close(&self) {
        let topics: Vec<_> = self.topics.read().unwrap().values().cloned().collect();
        for t in topics {
            for q in t.subscribers.lock().unwrap().drain(..).filter_map(|w| w.upgrade()) {
                q.close();
            }
        }
    }

    pub fn subscriber_count(&self, topic: &Topic) -> usize {
        self.state(topic)
            .map(|s| s.subscribers.lock().unwrap().iter().filter(|w| w.strong_count() > 0).count())
            .unwrap_or(0)
    }
}

impl<M: Clone> Default for Broker<M> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topic(s: &str) -> Topic {
        Topic::new(s).unwrap()
    }

    #[test]
    fn topic_names() {
        assert!(Topic::new("").is_err());
        assert!(Topic::new("yolo").is_err());
        assert!(Topic::new("/").is_err());
        assert!(Topic::new("/a b").is_err());
        assert_eq!(topic("/yolo/bboxes").as_str(), "/yolo/bboxes");
        let b: Broker<u32> = Broker::new();
        b.register(&topic("/a")).unwrap();
        assert!(b.register(&topic("/a")).is_err());
    }

    #[test]
    fn publish_without_subscribers() {
        let b: Broker<u32> = Broker::new();
        let t = topic("/t");
        b.register(&t).unwrap();
        assert_eq!(b.publish(&t, 1).unwrap(), 0);
        assert!(matches!(b.publish(&topic("/missing"), 1), Err(Error::NoSuchTopic(_))));
    }

    #[test]
    fn fan_out_in_order() {
        let b: Broker<u32> = Broker::new();
        let t = topic("/t");
        b.register(&t).unwrap();
        let s1 = b.subscribe(&t).unwrap();
        let s2 = b.subscribe(&t).unwrap();
        for i in 0..5 {
            assert_eq!(b.publish(&t, i).unwrap(), 2);
        }
        assert_eq!(s1.collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(s2.collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn drop_oldest_on_overflow() {
        let b: Broker<u32> = Broker::new();
        let t = topic("/t");
        b.register(&t).unwrap();
        let s = b.subscribe(&t).unwrap();
        for i in 1..=17 {
            b.publish(&t, i).unwrap();
        }
        assert_eq!(s.dropped(), 1);
        let got: Vec<u32> = std::iter::from_fn(|| s.try_recv()).collect();
        assert_eq!(got, (2..=17).collect::<Vec<_>>());
    }

    #[test]
    fn dropped_subscriptions_are_pruned() {
        let b: Broker<u32> = Broker::new();
        let t = topic("/t");
        b.register(&t).unwrap();
        let s = b.subscribe(&t).unwrap();
        assert_eq!(b.subscriber_count(&t), 1);
        drop(s);
        assert_eq!(b.publish(&t, 1).unwrap(), 0);
        assert_eq!(b.subscriber_count(&t), 0);
    }

    #[test]
    fn close_wakes_blocked_receiver() {
        let b: Arc<Broker<u32>> = Arc::new(Broker::new());
        let t = topic("/t");
        b.register(&t).unwrap();
        let s = b.subscribe(&t).unwrap();
        b.publish(&t, 7).unwrap();
        let b2 = b.clone();
        let h = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            b2.close();
        });
        assert_eq!(s.recv_timeout(Duration::from_secs(5)), Recv::Message(7));
        assert_eq!(s.recv_timeout(Duration::from_secs(5)), Recv::Closed);
        h.join().unwrap();
        assert_eq!(s.recv_timeout(Duration::from_millis(1)), Recv::Closed);
    }

    #[test]
    fn concurrent_publishers_keep_per_publisher_order() {
        let b: Arc<Broker<(u8, u32)>> = Arc::new(Broker::with_capacity(10_000));
        let t = topic("/t");
        b.register(&t).unwrap();
        let s = b.subscribe(&t).unwrap();
        let handles: Vec<_> = (0..4u8)
            .map(|p| {
                let (b, t) = (b.clone(), t.clone());
                std::thread::spawn(move || {
                    for i in 0..1000 {
                        b.publish(&t, (p, i)).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let mut last = [None::<u32>; 4];
        let mut n = 0;
        while let Some((p, i)) = s.try_recv() {
            if let Some(prev) = last[p as usize] {
                assert!(i > prev);
            }
            last[p as usize] = Some(i);
            n += 1;
        }
        assert_eq!(n, 4000);
    }
}
