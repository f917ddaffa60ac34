use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AddressPattern, BusEvent, Context, Input, RtsError, Verticle, FEED_ADDRESS};
use crate::mailbox::Mailbox;
use crate::model::Feature;

pub const DEFAULT_SUBSCRIPTION_CAP: usize = 1024;
const CLIENT_QUEUE_DEPTH: usize = 4096;

/// Which events a client wants. Unset fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorFilter {
    #[serde(default = "default_address")]
    pub address: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_feature: Option<Feature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acp_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acp_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acp_event: Option<String>,
}

fn default_address() -> String {
    FEED_ADDRESS.to_string()
}

impl Default for MonitorFilter {
    fn default() -> Self {
        Self { address: default_address(), has_feature: None, acp_id: None, acp_type: None, acp_event: None }
    }
}

impl MonitorFilter {
    pub fn feature(feature: Feature) -> Self {
        Self { has_feature: Some(feature), ..Self::default() }
    }

    pub fn sensor(acp_id: &str) -> Self {
        Self { acp_id: Some(acp_id.to_string()), ..Self::default() }
    }

    /// Field predicates apply to envelope bodies; JSON bodies only match
    /// filters without envelope predicates.
    fn accepts_body(&self, ev: &BusEvent) -> bool {
        let wants_envelope =
            self.has_feature.is_some() || self.acp_id.is_some() || self.acp_type.is_some() || self.acp_event.is_some();
        let Some(env) = ev.body.envelope() else { return !wants_envelope };
        self.has_feature.is_none_or(|f| env.cooked(f).is_some())
            && self.acp_id.as_deref().is_none_or(|id| env.acp_id() == id)
            && self.acp_type.as_deref().is_none_or(|t| env.acp_type() == t)
            && self.acp_event.as_deref().is_none_or(|e| env.acp_event() == Some(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SubscriptionToken {
    pub id: u64,
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub token: SubscriptionToken,
    pub event: Arc<BusEvent>,
}

type Gate = Arc<dyn Fn(&BusEvent) -> bool + Send + Sync>;

struct TokenEntry {
    client: String,
    pattern: AddressPattern,
    filter: MonitorFilter,
    gate: Option<Gate>,
    stream: Arc<Mailbox<Delivery>>,
}

struct MonitorState {
    cap: usize,
    next_id: u64,
    tokens: BTreeMap<u64, TokenEntry>,
    delivered: u64,
}

/// Push-style client stream for one subscription token.
pub struct ClientStream {
    token: SubscriptionToken,
    mailbox: Arc<Mailbox<Delivery>>,
    state: Weak<Mutex<MonitorState>>,
}

impl ClientStream {
    pub fn token(&self) -> SubscriptionToken {
        self.token
    }

    pub fn try_recv(&self) -> Option<Delivery> {
        self.mailbox.try_recv()
    }

    pub fn recv_timeout(&self, t: Duration) -> Option<Delivery> {
        self.mailbox.recv_timeout(t)
    }

    pub fn drain(&self) -> Vec<Delivery> {
        self.mailbox.drain()
    }

    pub fn dropped(&self) -> u64 {
        self.mailbox.stats().dropped
    }
}

impl Drop for ClientStream {
    fn drop(&mut self) {
        if let Some(st) = self.state.upgrade() {
            st.lock().unwrap().tokens.remove(&self.token.id);
        }
    }
}

/// Client-facing side of the monitor: issue and revoke tokens.
#[derive(Clone)]
pub struct RtMonitorHandle {
    state: Arc<Mutex<MonitorState>>,
}

impl RtMonitorHandle {
    pub fn subscribe(&self, client: &str, filter: MonitorFilter) -> Result<ClientStream, RtsError> {
        self.subscribe_gated(client, filter, None)
    }

    /// Like [`subscribe`](Self::subscribe) with an extra per-event check,
    /// e.g. an access-control decision for the client.
    pub fn subscribe_gated(
        &self,
        client: &str,
        filter: MonitorFilter,
        gate: Option<Gate>,
    ) -> Result<ClientStream, RtsError> {
        let pattern = AddressPattern::parse(&filter.address)?;
        let mut st = self.state.lock().unwrap();
        if st.tokens.len() >= st.cap {
            return Err(RtsError::TooManySubscriptions(st.cap));
        }
        st.next_id += 1;
        let token = SubscriptionToken { id: st.next_id };
        let stream = Arc::new(Mailbox::new(CLIENT_QUEUE_DEPTH));
        st.tokens.insert(
            token.id,
            TokenEntry { client: client.to_string(), pattern, filter, gate, stream: stream.clone() },
        );
        Ok(ClientStream { token, mailbox: stream, state: Arc::downgrade(&self.state) })
    }

    /// After this returns the client receives nothing more, including
    /// anything already queued.
    pub fn revoke(&self, token: SubscriptionToken) -> Result<(), RtsError> {
        let entry = self.state.lock().unwrap().tokens.remove(&token.id).ok_or(RtsError::UnknownToken(token.id))?;
        entry.stream.close();
        entry.stream.drain();
        Ok(())
    }

    pub fn active(&self) -> Vec<(SubscriptionToken, String)> {
        let st = self.state.lock().unwrap();
        st.tokens.iter().map(|(id, e)| (SubscriptionToken { id: *id }, e.client.clone())).collect()
    }

    pub fn delivered(&self) -> u64 {
        self.state.lock().unwrap().delivered
    }
}

/// Outbound verticle pushing matching bus events to subscribed clients.
pub struct RtMonitor {
    state: Arc<Mutex<MonitorState>>,
}

impl RtMonitor {
    pub fn new(cap: usize) -> (Self, RtMonitorHandle) {
        let state = Arc::new(Mutex::new(MonitorState { cap, next_id: 0, tokens: BTreeMap::new(), delivered: 0 }));
        (Self { state: state.clone() }, RtMonitorHandle { state })
    }
}

impl Verticle for RtMonitor {
    fn handle(&mut self, input: Input<'_>, _ctx: &mut Context<'_>) {
        let Input::Bus(ev) = input else { return };
        let mut st = self.state.lock().unwrap();
        let mut delivered = 0;
        let mut shared: Option<Arc<BusEvent>> = None;
        for (id, t) in &st.tokens {
            if t.pattern.matches(&ev.address)
                && t.filter.accepts_body(ev)
                && t.gate.as_ref().is_none_or(|g| g(ev))
            {
                let event = shared.get_or_insert_with(|| Arc::new(ev.clone())).clone();
                if t.stream.push(Delivery { token: SubscriptionToken { id: *id }, event }) {
                    delivered += 1;
                }
            }
        }
        st.delivered += delivered;
    }
}
