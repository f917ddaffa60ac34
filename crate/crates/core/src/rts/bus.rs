use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, Weak};

use serde_json::Value;

use super::RtsError;
use crate::mailbox::Mailbox;
use crate::model::{Clock, Envelope, Timestamp};

pub const DEFAULT_MAILBOX_DEPTH: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum BusBody {
    Envelope(Arc<Envelope>),
    Json(Arc<Value>),
}

impl BusBody {
    pub fn envelope(&self) -> Option<&Envelope> {
        match self {
            BusBody::Envelope(e) => Some(e),
            BusBody::Json(_) => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            BusBody::Envelope(e) => e.to_json(),
            BusBody::Json(v) => (**v).clone(),
        }
    }
}

impl From<Envelope> for BusBody {
    fn from(e: Envelope) -> Self {
        BusBody::Envelope(Arc::new(e))
    }
}

impl From<Value> for BusBody {
    fn from(v: Value) -> Self {
        BusBody::Json(Arc::new(v))
    }
}

/// Where an event came from when it reached this system over a router link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteInfo {
    pub origin: String,
    pub origin_seq: u64,
    /// Systems the event has already visited, origin first.
    pub path: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BusEvent {
    pub address: String,
    pub body: BusBody,
    pub published_at: Timestamp,
    pub seq: u64,
    /// Broker receipt time for events that entered through the feed.
    pub received_at: Option<Timestamp>,
    pub route: Option<Arc<RouteInfo>>,
}

/// Bus addresses are dot-separated. A pattern is either an exact address,
/// `prefix.*` (anything below `prefix`), or `*` (everything).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AddressPattern(String);

impl AddressPattern {
    pub fn parse(s: &str) -> Result<Self, RtsError> {
        let body = s.strip_suffix(".*").unwrap_or(s);
        let ok = s == "*"
            || (!body.is_empty() && body.split('.').all(|p| !p.is_empty() && !p.contains('*')));
        if ok {
            Ok(Self(s.to_string()))
        } else {
            Err(RtsError::InvalidAddress(s.to_string()))
        }
    }

    pub fn matches(&self, address: &str) -> bool {
        if self.0 == "*" {
            return true;
        }
        match self.0.strip_suffix(".*") {
            Some(prefix) => {
                address.len() > prefix.len() + 1
                    && address.starts_with(prefix)
                    && address.as_bytes()[prefix.len()] == b'.'
            }
            None => self.0 == address,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AddressPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type BusMailbox = Mailbox<Arc<BusEvent>>;

struct BusSub {
    id: u64,
    patterns: Vec<AddressPattern>,
    mailbox: Arc<BusMailbox>,
}

#[derive(Default)]
struct BusState {
    seqs: HashMap<String, u64>,
    subs: Vec<BusSub>,
    next_id: u64,
    published: u64,
    delivered: u64,
    shutdown: bool,
}

struct BusInner {
    state: Mutex<BusState>,
    clock: Arc<dyn Clock>,
}

/// The shared logical mailbox. Publishing assigns the per-address sequence
/// number and fans the event out to matching subscribers while holding the
/// bus lock, so every subscriber sees each address in sequence order.
#[derive(Clone)]
pub struct EventBus {
    inner: Arc<BusInner>,
}

impl fmt::Debug for EventBus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EventBus")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BusStats {
    pub published: u64,
    pub delivered: u64,
    pub subscribers: usize,
}

impl EventBus {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Arc::new(BusInner {
                state: Mutex::new(BusState::default()),
                clock,
            }),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn publish(&self, address: &str, body: impl Into<BusBody>) -> Result<u64, RtsError> {
        self.publish_event(address, body.into(), None, None)
    }

    pub fn publish_event(
        &self,
        address: &str,
        body: BusBody,
        received_at: Option<Timestamp>,
        route: Option<Arc<RouteInfo>>,
    ) -> Result<u64, RtsError> {
        let mut st = self.inner.state.lock().unwrap();
        if st.shutdown {
            return Err(RtsError::Shutdown);
        }
        let seq = {
            let s = st.seqs.entry(address.to_string()).or_insert(0);
            *s += 1;
            *s
        };
        let event = Arc::new(BusEvent {
            address: address.to_string(),
            body,
            published_at: self.inner.clock.now(),
            seq,
            received_at,
            route,
        });
        let mut delivered = 0;
        for sub in &st.subs {
            if sub.patterns.iter().any(|p| p.matches(address)) && sub.mailbox.push(event.clone()) {
                delivered += 1;
            }
        }
        st.published += 1;
        st.delivered += delivered;
        Ok(seq)
    }

    pub fn subscribe(&self, patterns: &[&str], depth: usize) -> Result<BusSubscription, RtsError> {
        let patterns = patterns.iter().map(|p| AddressPattern::parse(p)).collect::<Result<Vec<_>, _>>()?;
        let mailbox = Arc::new(Mailbox::new(depth));
        let mut st = self.inner.state.lock().unwrap();
        if st.shutdown {
            return Err(RtsError::Shutdown);
        }
        st.next_id += 1;
        let id = st.next_id;
        st.subs.push(BusSub { id, patterns, mailbox: mailbox.clone() });
        Ok(BusSubscription { id, bus: Arc::downgrade(&self.inner), mailbox })
    }

    /// Closes every subscriber mailbox and rejects further publishes.
    pub fn shutdown(&self) {
        let mut st = self.inner.state.lock().unwrap();
        st.shutdown = true;
        for s in &st.subs {
            s.mailbox.close();
        }
    }

    pub fn stats(&self) -> BusStats {
        let st = self.inner.state.lock().unwrap();
        BusStats { published: st.published, delivered: st.delivered, subscribers: st.subs.len() }
    }
}

/// A bus subscriber's queue; unsubscribes when dropped.
pub struct BusSubscription {
    id: u64,
    bus: Weak<BusInner>,
    mailbox: Arc<BusMailbox>,
}

impl fmt::Debug for BusSubscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BusSubscription").field("id", &self.id).finish()
    }
}

impl BusSubscription {
    pub fn mailbox(&self) -> &Arc<BusMailbox> {
        &self.mailbox
    }

    pub fn try_recv(&self) -> Option<Arc<BusEvent>> {
        self.mailbox.try_recv()
    }

    pub fn recv_timeout(&self, t: std::time::Duration) -> Option<Arc<BusEvent>> {
        self.mailbox.recv_timeout(t)
    }

    pub fn drain(&self) -> Vec<Arc<BusEvent>> {
        self.mailbox.drain()
    }
}

impl Drop for BusSubscription {
    fn drop(&mut self) {
        self.mailbox.close();
        if let Some(bus) = self.bus.upgrade() {
            bus.state.lock().unwrap().subs.retain(|s| s.id != self.id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemClock;
    use serde_json::json;

    fn bus() -> EventBus {
        EventBus::new(Arc::new(SystemClock))
    }

    #[test]
    fn patterns() {
        let p = AddressPattern::parse("sensor.*").unwrap();
        assert!(p.matches("sensor.abc"));
        assert!(p.matches("sensor.a.b"));
        assert!(!p.matches("sensor"));
        assert!(!p.matches("sensors.x"));
        assert!(AddressPattern::parse("*").unwrap().matches("x"));
        for bad in ["", "a..b", "a.*.b", "*.a"] {
            assert!(AddressPattern::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn seq_without_subscribers_and_fanout() {
        let b = bus();
        assert_eq!(b.publish("platform.feed", json!(1)).unwrap(), 1);
        let s1 = b.subscribe(&["platform.feed"], 8).unwrap();
        let s2 = b.subscribe(&["platform.*"], 8).unwrap();
        assert_eq!(b.publish("platform.feed", json!(2)).unwrap(), 2);
        let a = s1.drain();
        let c = s2.drain();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].seq, 2);
        assert_eq!(a[0].body, c[0].body);
    }

    #[test]
    fn dropped_subscription_stops_delivery() {
        let b = bus();
        let s = b.subscribe(&["x"], 8).unwrap();
        let mb = s.mailbox().clone();
        drop(s);
        b.publish("x", json!(null)).unwrap();
        assert!(mb.is_empty());
        assert_eq!(b.stats().subscribers, 0);
    }

    #[test]
    fn shutdown_rejects() {
        let b = bus();
        b.shutdown();
        assert_eq!(b.publish("x", json!(null)), Err(RtsError::Shutdown));
    }
}
