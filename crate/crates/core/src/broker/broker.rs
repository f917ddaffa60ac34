use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::topic::{Topic, TopicError, TopicFilter};
use crate::mailbox::Mailbox;
use crate::model::{Clock, SystemClock, Timestamp};

pub const DEFAULT_QUEUE_DEPTH: usize = 1024;

pub type Payload = Arc<[u8]>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error("duplicate bridge {local} -> {remote}")]
    DuplicateBridge { local: String, remote: String },
    #[error("broker {0} is no longer running")]
    BrokerGone(String),
    #[error("unknown broker {0:?}")]
    UnknownBroker(String),
    #[error("bridge config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BrokerId(pub String);

impl fmt::Display for BrokerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BrokerId {
    fn from(s: &str) -> Self {
        BrokerId(s.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct BrokerMessage {
    pub topic: Topic,
    pub payload: Payload,
    /// Broker the message was first published on.
    pub origin: BrokerId,
    /// Stamped by the delivering broker when it accepted the message.
    pub received_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeDirection {
    In,
    Out,
    Both,
}

/// One entry of a bridge configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub remote: String,
    pub filters: Vec<String>,
    pub direction: BridgeDirection,
}

impl BridgeConfig {
    pub fn load_file(path: &std::path::Path) -> Result<Vec<BridgeConfig>, BrokerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BrokerError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BrokerError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BrokerStats {
    pub published: u64,
    pub delivered: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub subscriptions: usize,
    pub bridges: usize,
}

struct SubEntry {
    filter: TopicFilter,
    mailbox: Arc<Mailbox<BrokerMessage>>,
}

struct Link {
    bridge_id: u64,
    key: String,
    target_id: BrokerId,
    target: Weak<BrokerInner>,
    filters: Vec<TopicFilter>,
}

#[derive(Default)]
struct BrokerState {
    subs: BTreeMap<u64, SubEntry>,
    links: Vec<Link>,
    published: u64,
    delivered: u64,
    forwarded: u64,
    dropped_closed: u64,
}

struct BrokerInner {
    id: BrokerId,
    queue_depth: usize,
    clock: Arc<dyn Clock>,
    state: Mutex<BrokerState>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// An in-process MQTT-style broker. Cloning yields another handle to the
/// same broker; every command is serialised through its state lock.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<BrokerInner>,
}

impl fmt::Debug for Broker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Broker").field("id", &self.inner.id).finish()
    }
}

impl Broker {
    pub fn new(id: &str) -> Self {
        Self::with_options(id, DEFAULT_QUEUE_DEPTH, Arc::new(SystemClock))
    }

    pub fn with_options(id: &str, queue_depth: usize, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Arc::new(BrokerInner {
                id: BrokerId(id.to_string()),
                queue_depth,
                clock,
                state: Mutex::new(BrokerState::default()),
            }),
        }
    }

    pub fn id(&self) -> &BrokerId {
        &self.inner.id
    }

    pub fn subscribe(&self, filter: &str) -> Result<Subscription, BrokerError> {
        let filter = TopicFilter::parse(filter)?;
        let mailbox = Arc::new(Mailbox::new(self.inner.queue_depth));
        let id = next_id();
        self.inner
            .state
            .lock()
            .unwrap()
            .subs
            .insert(id, SubEntry { filter, mailbox: mailbox.clone() });
        Ok(Subscription { id, broker: Arc::downgrade(&self.inner), mailbox })
    }

    /// Publishes locally and over every matching bridge. Returns the number
    /// of local subscriptions the message was delivered to.
    pub fn publish(&self, topic: &str, payload: impl Into<Payload>) -> Result<usize, BrokerError> {
        let origin = self.inner.id.clone();
        self.publish_from(topic, payload, &origin)
    }

    /// Like [`Broker::publish`] for a message that arrived from `origin`; the
    /// message is never forwarded back to `origin` or to any broker it has
    /// already reached.
    pub fn publish_from(
        &self,
        topic: &str,
        payload: impl Into<Payload>,
        origin: &BrokerId,
    ) -> Result<usize, BrokerError> {
        let topic = Topic::parse(topic)?;
        let payload: Payload = payload.into();
        let mut visited: HashSet<BrokerId> = HashSet::new();
        visited.insert(origin.clone());
        visited.insert(self.inner.id.clone());
        let local = self.inner.deliver(&topic, &payload, origin);

        let mut frontier: VecDeque<Arc<BrokerInner>> = VecDeque::from([self.inner.clone()]);
        while let Some(b) = frontier.pop_front() {
            for target in b.forward_targets(&topic) {
                if visited.insert(target.id.clone()) {
                    target.deliver(&topic, &payload, origin);
                    frontier.push_back(target);
                }
            }
        }
        Ok(local)
    }

    pub fn stats(&self) -> BrokerStats {
        let st = self.inner.state.lock().unwrap();
        let dropped: u64 = st.subs.values().map(|s| s.mailbox.stats().dropped).sum();
        let bridges: HashSet<u64> = st.links.iter().map(|l| l.bridge_id).collect();
        BrokerStats {
            published: st.published,
            delivered: st.delivered,
            forwarded: st.forwarded,
            dropped: dropped + st.dropped_closed,
            subscriptions: st.subs.len(),
            bridges: bridges.len(),
        }
    }

    /// Brokers this one forwards to, one entry per bridge leg.
    pub fn bridge_targets(&self) -> Vec<String> {
        let st = self.inner.state.lock().unwrap();
        st.links.iter().map(|l| l.target_id.to_string()).collect()
    }

    /// Opens a client session; its last-will fires if the session is dropped
    /// without [`ClientSession::disconnect`].
    pub fn connect(&self, client_id: &str, last_will: Option<LastWill>) -> ClientSession {
        ClientSession {
            client_id: client_id.to_string(),
            broker: self.clone(),
            last_will,
        }
    }
}

impl BrokerInner {
    fn deliver(&self, topic: &Topic, payload: &Payload, origin: &BrokerId) -> usize {
        let received_at = self.clock.now();
        let mut st = self.state.lock().unwrap();
        st.published += 1;
        let mut count = 0;
        let mut closed = 0;
        for sub in st.subs.values() {
            if sub.filter.matches(topic) {
                let msg = BrokerMessage {
                    topic: topic.clone(),
                    payload: payload.clone(),
                    origin: origin.clone(),
                    received_at: received_at.clone(),
                };
                if sub.mailbox.push(msg) {
                    count += 1;
                } else {
                    closed += 1;
                }
            }
        }
        st.delivered += count as u64;
        st.dropped_closed += closed;
        count
    }

    fn forward_targets(&self, topic: &Topic) -> Vec<Arc<BrokerInner>> {
        let mut st = self.state.lock().unwrap();
        let targets: Vec<Arc<BrokerInner>> = st
            .links
            .iter()
            .filter(|l| l.filters.iter().any(|f| f.matches(topic)))
            .filter_map(|l| l.target.upgrade())
            .collect();
        st.forwarded += targets.len() as u64;
        targets
    }
}

/// Subscription stream; unsubscribes on drop.
pub struct Subscription {
    id: u64,
    broker: Weak<BrokerInner>,
    mailbox: Arc<Mailbox<BrokerMessage>>,
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscription").field("id", &self.id).finish()
    }
}

impl Subscription {
    pub fn recv(&self) -> Option<BrokerMessage> {
        self.mailbox.recv()
    }

    pub fn try_recv(&self) -> Option<BrokerMessage> {
        self.mailbox.try_recv()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<BrokerMessage> {
        self.mailbox.recv_timeout(timeout)
    }

    pub fn drain(&self) -> Vec<BrokerMessage> {
        self.mailbox.drain()
    }

    pub fn dropped(&self) -> u64 {
        self.mailbox.stats().dropped
    }

    /// Shared handle to the underlying queue, so a consumer thread can block
    /// on it while the subscription itself stays owned elsewhere.
    pub fn mailbox(&self) -> Arc<Mailbox<BrokerMessage>> {
        self.mailbox.clone()
    }

    pub fn unsubscribe(self) {}
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(b) = self.broker.upgrade() {
            b.state.lock().unwrap().subs.remove(&self.id);
        }
        self.mailbox.close();
    }
}

#[derive(Debug, Clone)]
pub struct LastWill {
    pub topic: String,
    pub payload: Vec<u8>,
}

pub struct ClientSession {
    client_id: String,
    broker: Broker,
    last_will: Option<LastWill>,
}

impl ClientSession {
    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn publish(&self, topic: &str, payload: impl Into<Payload>) -> Result<usize, BrokerError> {
        self.broker.publish(topic, payload)
    }

    pub fn subscribe(&self, filter: &str) -> Result<Subscription, BrokerError> {
        self.broker.subscribe(filter)
    }

    /// Keep-alive has nothing to do in-process.
    pub fn ping(&self) {}

    pub fn disconnect(mut self) {
        self.last_will = None;
    }
}

impl Drop for ClientSession {
    fn drop(&mut self) {
        if let Some(will) = self.last_will.take() {
            let _ = self.broker.publish(&will.topic, will.payload);
        }
    }
}

/// Handle to an installed bridge.
#[derive(Debug)]
pub struct BridgeHandle {
    id: u64,
    local: Broker,
    remote: Broker,
}

impl BridgeHandle {
    pub fn remove(self) {
        for b in [&self.local, &self.remote] {
            b.inner.state.lock().unwrap().links.retain(|l| l.bridge_id != self.id);
        }
    }
}

fn bridge_key(a: &BrokerId, b: &BrokerId, filters: &[TopicFilter]) -> String {
    let mut fs: Vec<String> = filters.iter().map(ToString::to_string).collect();
    fs.sort();
    format!("{a}->{b}:{}", fs.join(","))
}

/// Connects two brokers. `Out` forwards local→remote, `In` remote→local.
pub fn bridge(local: &Broker, remote: &Broker, config: &BridgeConfig) -> Result<BridgeHandle, BrokerError> {
    let filters = config
        .filters
        .iter()
        .map(|f| TopicFilter::parse(f))
        .collect::<Result<Vec<_>, _>>()?;
    let mut legs: Vec<(&Broker, &Broker)> = Vec::new();
    if matches!(config.direction, BridgeDirection::Out | BridgeDirection::Both) {
        legs.push((local, remote));
    }
    if matches!(config.direction, BridgeDirection::In | BridgeDirection::Both) {
        legs.push((remote, local));
    }
    let keys: Vec<String> = legs.iter().map(|(a, b)| bridge_key(a.id(), b.id(), &filters)).collect();
    for ((from, _), key) in legs.iter().zip(&keys) {
        if from.inner.state.lock().unwrap().links.iter().any(|l| &l.key == key) {
            return Err(BrokerError::DuplicateBridge {
                local: local.id().to_string(),
                remote: remote.id().to_string(),
            });
        }
    }
    let id = next_id();
    for ((from, to), key) in legs.into_iter().zip(keys) {
        from.inner.state.lock().unwrap().links.push(Link {
            bridge_id: id,
            key,
            target_id: to.id().clone(),
            target: Arc::downgrade(&to.inner),
            filters: filters.clone(),
        });
    }
    Ok(BridgeHandle { id, local: local.clone(), remote: remote.clone() })
}

/// Named brokers of one deployment (local, ttn, zigbee, peers).
#[derive(Debug, Clone, Default)]
pub struct BrokerRegistry {
    brokers: BTreeMap<String, Broker>,
}

impl BrokerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, broker: Broker) {
        self.brokers.insert(broker.id().0.clone(), broker);
    }

    pub fn get(&self, id: &str) -> Result<&Broker, BrokerError> {
        self.brokers.get(id).ok_or_else(|| BrokerError::UnknownBroker(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.brokers.keys().map(String::as_str)
    }

    pub fn apply_bridges(
        &self,
        local: &str,
        configs: &[BridgeConfig],
    ) -> Result<Vec<BridgeHandle>, BrokerError> {
        let l = self.get(local)?;
        configs.iter().map(|c| bridge(l, self.get(&c.remote)?, c)).collect()
    }
}
