//! In-process broker state, shared by every transport.
//!
//! Each session owns a mailbox with one bounded queue per subscribed topic.
//! A full queue drops its oldest entry. Fan-out happens under the registry
//! lock, so all subscribers observe publishes in the same order.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::codec::Frame;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

/// A published message as held in subscriber queues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub topic: Arc<str>,
    pub payload: Arc<[u8]>,
}

impl Delivery {
    pub fn to_frame(&self) -> Frame {
        Frame::publish(&*self.topic, &*self.payload)
    }
}

/// What a session's transport should write next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Message(Delivery),
    /// Direct replies such as PONG, which bypass topic queues.
    Control(Frame),
}

/// Per-subscription counters. `enqueued - delivered - queued == dropped`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubStats {
    pub queued: usize,
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Default)]
struct SubQueue {
    queue: VecDeque<(u64, Delivery)>,
    stats: SubStats,
}

#[derive(Default)]
struct MailboxState {
    subs: HashMap<Arc<str>, SubQueue>,
    control: VecDeque<Frame>,
    closed: bool,
}

#[derive(Default)]
struct Mailbox {
    state: Mutex<MailboxState>,
    ready: Condvar,
}

impl Mailbox {
    fn lock(&self) -> MutexGuard<'_, MailboxState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Default)]
struct Registry {
    next_id: u64,
    next_seq: u64,
    sessions: HashMap<u64, Arc<Mailbox>>,
    topics: HashMap<Arc<str>, BTreeSet<u64>>,
}

struct Shared {
    capacity: usize,
    registry: Mutex<Registry>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Clone)]
pub struct Broker {
    shared: Arc<Shared>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl Broker {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            shared: Arc::new(Shared {
                capacity,
                registry: Mutex::new(Registry::default()),
            }),
        }
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity
    }

    pub fn connect(&self) -> Session {
        let mut reg = self.shared.lock();
        let id = reg.next_id;
        reg.next_id += 1;
        let mailbox = Arc::new(Mailbox::default());
        reg.sessions.insert(id, mailbox.clone());
        Session {
            id,
            mailbox,
            shared: self.shared.clone(),
        }
    }

    /// Fans out to current subscribers; returns how many received it.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> usize {
        let mut reg = self.shared.lock();
        let Some((topic, ids)) = reg.topics.get_key_value(topic) else {
            return 0;
        };
        let delivery = Delivery {
            topic: topic.clone(),
            payload: payload.into(),
        };
        let targets: Vec<Arc<Mailbox>> = ids.iter().filter_map(|id| reg.sessions.get(id).cloned()).collect();
        let seq = reg.next_seq;
        reg.next_seq += 1;
        let mut delivered = 0;
        for mb in targets {
            let mut st = mb.lock();
            let Some(sub) = st.subs.get_mut(&delivery.topic) else {
                continue;
            };
            if sub.queue.len() == self.shared.capacity {
                sub.queue.pop_front();
                sub.stats.dropped += 1;
            }
            sub.queue.push_back((seq, delivery.clone()));
            sub.stats.enqueued += 1;
            delivered += 1;
            drop(st);
            mb.ready.notify_all();
        }
        delivered
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.shared.lock().topics.get(topic).map_or(0, BTreeSet::len)
    }

    pub fn session_count(&self) -> usize {
        self.shared.lock().sessions.len()
    }
}

/// One connected client. Dropping it disconnects.
pub struct Session {
    id: u64,
    mailbox: Arc<Mailbox>,
    shared: Arc<Shared>,
}

impl Session {
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Idempotent; resubscribing keeps the existing queue and counters.
    pub fn subscribe(&self, topic: &str) {
        let mut reg = self.shared.lock();
        if !reg.sessions.contains_key(&self.id) {
            return;
        }
        let key: Arc<str> = match reg.topics.get_key_value(topic) {
            Some((k, _)) => k.clone(),
            None => topic.into(),
        };
        reg.topics.entry(key.clone()).or_default().insert(self.id);
        self.mailbox.lock().subs.entry(key).or_default();
    }

    /// Drops the subscription along with anything still queued for it.
    pub fn unsubscribe(&self, topic: &str) {
        let mut reg = self.shared.lock();
        if let Some(ids) = reg.topics.get_mut(topic) {
            ids.remove(&self.id);
            if ids.is_empty() {
                reg.topics.remove(topic);
            }
        }
        self.mailbox.lock().subs.remove(topic);
    }

    pub fn publish(&self, topic: &str, payload: &[u8]) -> usize {
        Broker {
            shared: self.shared.clone(),
        }
        .publish(topic, payload)
    }

    pub fn push_control(&self, frame: Frame) {
        let mut st = self.mailbox.lock();
        if st.closed {
            return;
        }
        st.control.push_back(frame);
        drop(st);
        self.mailbox.ready.notify_all();
    }

    pub fn stats(&self, topic: &str) -> Option<SubStats> {
        let st = self.mailbox.lock();
        st.subs.get(topic).map(|s| SubStats {
            queued: s.queue.len(),
            ..s.stats
        })
    }

    pub fn topics(&self) -> Vec<String> {
        let mut t: Vec<String> = self.mailbox.lock().subs.keys().map(|k| k.to_string()).collect();
        t.sort();
        t
    }

    pub fn is_closed(&self) -> bool {
        self.mailbox.lock().closed
    }

    /// Next outbound item, oldest first across topics. `None` on timeout or
    /// once the session is closed.
    pub fn recv(&self, timeout: Duration) -> Option<Outbound> {
        let deadline = Instant::now() + timeout;
        let mut st = self.mailbox.lock();
        loop {
            if st.closed {
                return None;
            }
            if let Some(f) = st.control.pop_front() {
                return Some(Outbound::Control(f));
            }
            let oldest = st
                .subs
                .iter()
                .filter_map(|(k, s)| s.queue.front().map(|(seq, _)| (*seq, k.clone())))
                .min_by_key(|(seq, _)| *seq);
            if let Some((_, topic)) = oldest {
                let sub = st.subs.get_mut(&topic).expect("topic present");
                let (_, d) = sub.queue.pop_front().expect("non-empty");
                sub.stats.delivered += 1;
                return Some(Outbound::Message(d));
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            st = self
                .mailbox
                .ready
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn try_recv(&self) -> Option<Outbound> {
        self.recv(Duration::ZERO)
    }

    /// Removes every subscription and wakes any blocked `recv`.
    pub fn disconnect(&self) {
        let mut reg = self.shared.lock();
        if reg.sessions.remove(&self.id).is_none() {
            return;
        }
        reg.topics.retain(|_, ids| {
            ids.remove(&self.id);
            !ids.is_empty()
        });
        drop(reg);
        let mut st = self.mailbox.lock();
        st.closed = true;
        st.subs.clear();
        st.control.clear();
        drop(st);
        self.mailbox.ready.notify_all();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.disconnect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payloads(s: &Session) -> Vec<Vec<u8>> {
        std::iter::from_fn(|| s.try_recv())
            .map(|o| match o {
                Outbound::Message(d) => d.payload.to_vec(),
                Outbound::Control(f) => panic!("unexpected {f:?}"),
            })
            .collect()
    }

    #[test]
    fn overflow_drops_oldest() {
        let b = Broker::new(64);
        let s = b.connect();
        s.subscribe("t");
        for i in 0..65u8 {
            b.publish("t", &[i]);
        }
        let st = s.stats("t").unwrap();
        assert_eq!((st.queued, st.enqueued, st.dropped), (64, 65, 1));
        let got = payloads(&s);
        assert_eq!(got.len(), 64);
        assert_eq!(got[0], vec![1]);
        assert_eq!(got[63], vec![64]);
        assert_eq!(s.stats("t").unwrap().delivered, 64);
    }

    #[test]
    fn exact_topic_match_only() {
        let b = Broker::default();
        let s = b.connect();
        s.subscribe("robot/state");
        assert_eq!(b.publish("robot", b"x"), 0);
        assert_eq!(b.publish("robot/state/x", b"x"), 0);
        assert_eq!(b.publish("robot/state", b"y"), 1);
        assert_eq!(payloads(&s), vec![b"y".to_vec()]);
    }

    #[test]
    fn unsubscribe_and_disconnect_remove_routes() {
        let b = Broker::default();
        let s = b.connect();
        s.subscribe("a");
        s.subscribe("b");
        s.unsubscribe("a");
        assert_eq!(b.subscriber_count("a"), 0);
        assert_eq!(b.subscriber_count("b"), 1);
        drop(s);
        assert_eq!(b.subscriber_count("b"), 0);
        assert_eq!(b.session_count(), 0);
    }

    #[test]
    fn recv_interleaves_topics_in_publish_order() {
        let b = Broker::default();
        let s = b.connect();
        s.subscribe("a");
        s.subscribe("b");
        for (t, p) in [("a", 1u8), ("b", 2), ("a", 3), ("b", 4)] {
            b.publish(t, &[p]);
        }
        assert_eq!(payloads(&s), vec![vec![1], vec![2], vec![3], vec![4]]);
    }

    #[test]
    fn control_frames_jump_the_queue() {
        let b = Broker::default();
        let s = b.connect();
        s.subscribe("a");
        b.publish("a", b"m");
        s.push_control(Frame::pong());
        assert_eq!(s.try_recv(), Some(Outbound::Control(Frame::pong())));
    }
}
