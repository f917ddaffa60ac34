use std::collections::{HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde_json::Value;

use super::{BusBody, Context, Input, RouteInfo, Verticle};
use crate::broker::{Broker, BrokerMessage};
use crate::decode::{dead_letter_record, DecodeError, DecoderManager, DEADLETTER_TOPIC};
use crate::model::Envelope;

pub const FEED_ADDRESS: &str = "platform.feed";
pub const DEADLETTER_ADDRESS: &str = "platform.deadletter";
/// Broker topics under this prefix carry events forwarded by a peer's router.
pub const ROUTE_TOPIC_PREFIX: &str = "route";

const ROUTE_DEDUP_WINDOW: usize = 65_536;

#[derive(Debug, Default)]
pub struct FeedCounters {
    pub received: AtomicU64,
    pub fed: AtomicU64,
    pub deadlettered: AtomicU64,
    pub routed_in: AtomicU64,
    pub duplicates: AtomicU64,
}

impl FeedCounters {
    pub fn get(&self) -> (u64, u64, u64) {
        (
            self.received.load(Ordering::Relaxed),
            self.fed.load(Ordering::Relaxed),
            self.deadlettered.load(Ordering::Relaxed),
        )
    }
}

/// Ingestion verticle: decodes broker messages and publishes envelopes on
/// `platform.feed` and `sensor.<acp_id>`. Messages that fail to decode go to
/// `platform.deadletter` (and the broker's dead-letter topic when a broker is
/// attached), never to the feed.
pub struct FeedHandler {
    decoders: Arc<DecoderManager>,
    deadletter_broker: Option<Broker>,
    counters: Arc<FeedCounters>,
    seen_routes: HashSet<(String, String, u64)>,
    seen_order: VecDeque<(String, String, u64)>,
}

impl FeedHandler {
    pub fn new(decoders: Arc<DecoderManager>) -> Self {
        Self {
            decoders,
            deadletter_broker: None,
            counters: Arc::new(FeedCounters::default()),
            seen_routes: HashSet::new(),
            seen_order: VecDeque::new(),
        }
    }

    pub fn with_deadletter_broker(mut self, broker: Broker) -> Self {
        self.deadletter_broker = Some(broker);
        self
    }

    pub fn counters(&self) -> Arc<FeedCounters> {
        self.counters.clone()
    }

    fn dead_letter(&self, msg: &BrokerMessage, err: &DecodeError, ctx: &mut Context<'_>) {
        self.counters.deadlettered.fetch_add(1, Ordering::Relaxed);
        let rec = dead_letter_record(msg.topic.as_str(), &msg.payload, err, &msg.received_at);
        if let Some(b) = &self.deadletter_broker {
            if b.publish(DEADLETTER_TOPIC, rec.to_string().into_bytes()).is_err() {
                ctx.error();
            }
        }
        ctx.publish(DEADLETTER_ADDRESS, rec);
    }

    fn routed(&mut self, msg: &BrokerMessage, ctx: &mut Context<'_>) {
        let parsed = serde_json::from_slice::<Value>(&msg.payload).ok().and_then(|v| {
            let address = v.get("address")?.as_str()?.to_string();
            let origin = v.get("origin")?.as_str()?.to_string();
            let origin_seq = v.get("origin_seq")?.as_u64()?;
            let path: Vec<String> = serde_json::from_value(v.get("path")?.clone()).ok()?;
            let body = v.get("body")?.clone();
            Some((address, RouteInfo { origin, origin_seq, path }, body))
        });
        let Some((address, route, body)) = parsed else {
            self.dead_letter(msg, &DecodeError::DecodeFailure("malformed routed event".into()), ctx);
            return;
        };
        let key = (route.origin.clone(), address.clone(), route.origin_seq);
        if !self.seen_routes.insert(key.clone()) {
            self.counters.duplicates.fetch_add(1, Ordering::Relaxed);
            return;
        }
        self.seen_order.push_back(key);
        if self.seen_order.len() > ROUTE_DEDUP_WINDOW {
            let old = self.seen_order.pop_front().unwrap();
            self.seen_routes.remove(&old);
        }
        self.counters.routed_in.fetch_add(1, Ordering::Relaxed);
        let route = Some(Arc::new(route));
        let body = match Envelope::from_json(&body) {
            Ok(env) => BusBody::from(env),
            Err(_) => BusBody::from(body),
        };
        if let Some(env) = body.envelope() {
            let per_sensor = format!("sensor.{}", env.acp_id());
            ctx.publish_event(&per_sensor, body.clone(), Some(msg.received_at.clone()), route.clone());
        }
        ctx.publish_event(&address, body, Some(msg.received_at.clone()), route);
    }
}

impl Verticle for FeedHandler {
    fn handle(&mut self, input: Input<'_>, ctx: &mut Context<'_>) {
        let Input::Broker(msg) = input else { return };
        if msg.topic.as_str() == DEADLETTER_TOPIC {
            return;
        }
        self.counters.received.fetch_add(1, Ordering::Relaxed);
        if msg.topic.segments().next() == Some(ROUTE_TOPIC_PREFIX) {
            self.routed(msg, ctx);
            return;
        }
        match self.decoders.decode(msg.topic.as_str(), &msg.payload, &msg.received_at) {
            Ok(out) => {
                self.counters.fed.fetch_add(1, Ordering::Relaxed);
                let per_sensor = format!("sensor.{}", out.envelope.acp_id());
                let body = BusBody::from(out.envelope);
                let received = Some(msg.received_at.clone());
                ctx.publish_event(FEED_ADDRESS, body.clone(), received.clone(), None);
                ctx.publish_event(&per_sensor, body, received, None);
            }
            Err(e) => self.dead_letter(msg, &e, ctx),
        }
    }
}
