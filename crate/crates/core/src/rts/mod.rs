//! Real-time server: an event bus plus independently scheduled verticles
//! that talk to each other only through it.

mod bus;
mod feed;
mod filer;
mod monitor;
mod router;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::broker::{BrokerMessage, Subscription};
use crate::model::{Clock, Timestamp};

pub use bus::{
    AddressPattern, BusBody, BusEvent, BusMailbox, BusStats, BusSubscription, EventBus, RouteInfo,
    DEFAULT_MAILBOX_DEPTH,
};
pub use feed::{FeedCounters, FeedHandler, DEADLETTER_ADDRESS, FEED_ADDRESS, ROUTE_TOPIC_PREFIX};
pub use filer::{day_shard_path, read_shards, sensor_shard_path, FilerCounters, MessageFiler};
pub use monitor::{
    ClientStream, Delivery, MonitorFilter, RtMonitor, RtMonitorHandle, SubscriptionToken, DEFAULT_SUBSCRIPTION_CAP,
};
pub use router::{MessageRouter, PeerStats, RouterHandle, RouterPeer, DEFAULT_PEER_BUFFER};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RtsError {
    #[error("runtime is shut down")]
    Shutdown,
    #[error("verticle {0:?} already deployed")]
    DuplicateName(String),
    #[error("no verticle named {0:?}")]
    UnknownVerticle(String),
    #[error("invalid bus address {0:?}")]
    InvalidAddress(String),
    #[error("subscription limit of {0} reached")]
    TooManySubscriptions(usize),
    #[error("unknown subscription token {0}")]
    UnknownToken(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerticleClass {
    Ingestion,
    Storage,
    Analysis,
    Outbound,
}

pub enum Input<'a> {
    Bus(&'a BusEvent),
    Broker(&'a BrokerMessage),
}

/// An actor. `handle` is never invoked concurrently with itself.
pub trait Verticle: Send {
    fn handle(&mut self, input: Input<'_>, ctx: &mut Context<'_>);
}

/// What a verticle may do while handling one input.
pub struct Context<'a> {
    bus: &'a EventBus,
    published: u64,
    errors: u64,
}

impl Context<'_> {
    pub fn publish(&mut self, address: &str, body: impl Into<BusBody>) -> Option<u64> {
        self.publish_event(address, body.into(), None, None)
    }

    pub fn publish_event(
        &mut self,
        address: &str,
        body: BusBody,
        received_at: Option<Timestamp>,
        route: Option<Arc<RouteInfo>>,
    ) -> Option<u64> {
        match self.bus.publish_event(address, body, received_at, route) {
            Ok(seq) => {
                self.published += 1;
                Some(seq)
            }
            Err(_) => {
                self.errors += 1;
                None
            }
        }
    }

    /// Records a failed side effect on this verticle's stats.
    pub fn error(&mut self) {
        self.errors += 1;
    }

    pub fn now(&self) -> Timestamp {
        self.bus.clock().now()
    }
}

pub enum Source {
    /// Bus address patterns.
    Bus(Vec<String>),
    Broker(Subscription),
}

pub struct VerticleSpec {
    pub name: String,
    pub class: VerticleClass,
    pub source: Source,
    pub verticle: Box<dyn Verticle>,
}

impl VerticleSpec {
    pub fn on_bus(name: &str, class: VerticleClass, addresses: &[&str], verticle: impl Verticle + 'static) -> Self {
        Self {
            name: name.to_string(),
            class,
            source: Source::Bus(addresses.iter().map(|a| a.to_string()).collect()),
            verticle: Box::new(verticle),
        }
    }

    pub fn on_broker(name: &str, class: VerticleClass, sub: Subscription, verticle: impl Verticle + 'static) -> Self {
        Self { name: name.to_string(), class, source: Source::Broker(sub), verticle: Box::new(verticle) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtsMode {
    /// One thread per verticle.
    Threaded,
    /// Verticles run only inside [`Rts::pump`], on the caller's thread, in
    /// deployment order. Used with virtual clocks for reproducible runs.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerticleStats {
    pub name: String,
    pub class: VerticleClass,
    pub received: u64,
    pub published: u64,
    pub dropped: u64,
    pub errors: u64,
    pub mean_handler_ms: f64,
    pub p99_handler_ms: f64,
}

const LATENCY_SAMPLES: usize = 1 << 14;

#[derive(Default)]
struct StatsAcc {
    received: u64,
    published: u64,
    errors: u64,
    total_ns: u128,
    recent_ns: Vec<u64>,
    next: usize,
}

impl StatsAcc {
    fn record(&mut self, ns: u64, published: u64, errors: u64) {
        self.received += 1;
        self.published += published;
        self.errors += errors;
        self.total_ns += ns as u128;
        if self.recent_ns.len() < LATENCY_SAMPLES {
            self.recent_ns.push(ns);
        } else {
            self.recent_ns[self.next] = ns;
            self.next = (self.next + 1) % LATENCY_SAMPLES;
        }
    }
}

enum Queue {
    Bus(BusSubscription),
    Broker(Subscription),
}

enum Item {
    Bus(Arc<BusEvent>),
    Broker(BrokerMessage),
}

impl Queue {
    fn try_next(&self) -> Option<Item> {
        match self {
            Queue::Bus(s) => s.try_recv().map(Item::Bus),
            Queue::Broker(s) => s.try_recv().map(Item::Broker),
        }
    }

    fn next_timeout(&self, t: Duration) -> Option<Item> {
        match self {
            Queue::Bus(s) => s.recv_timeout(t).map(Item::Bus),
            Queue::Broker(s) => s.recv_timeout(t).map(Item::Broker),
        }
    }

    fn close(&self) {
        match self {
            Queue::Bus(s) => s.mailbox().close(),
            Queue::Broker(s) => s.mailbox().close(),
        }
    }

    fn is_closed(&self) -> bool {
        match self {
            Queue::Bus(s) => s.mailbox().is_closed(),
            Queue::Broker(s) => s.mailbox().is_closed(),
        }
    }

    fn mailbox_stats(&self) -> crate::mailbox::MailboxStats {
        match self {
            Queue::Bus(s) => s.mailbox().stats(),
            Queue::Broker(s) => s.mailbox().stats(),
        }
    }

    fn dropped(&self) -> u64 {
        self.mailbox_stats().dropped
    }
}

struct Deployed {
    name: String,
    class: VerticleClass,
    verticle: Mutex<Box<dyn Verticle>>,
    queue: Queue,
    stats: Mutex<StatsAcc>,
    stopped: AtomicBool,
}

impl Deployed {
    fn process(&self, item: Item, bus: &EventBus) {
        let started = Instant::now();
        let mut ctx = Context { bus, published: 0, errors: 0 };
        {
            let mut v = self.verticle.lock().unwrap();
            match &item {
                Item::Bus(e) => v.handle(Input::Bus(e), &mut ctx),
                Item::Broker(m) => v.handle(Input::Broker(m), &mut ctx),
            }
        }
        let ns = started.elapsed().as_nanos() as u64;
        self.stats.lock().unwrap().record(ns, ctx.published, ctx.errors);
    }

    fn is_idle(&self) -> bool {
        let mb = self.queue.mailbox_stats();
        let handled = self.stats.lock().unwrap().received;
        mb.queued == 0 && handled + mb.dropped >= mb.accepted
    }

    fn stats(&self) -> VerticleStats {
        let acc = self.stats.lock().unwrap();
        let mean = if acc.received == 0 { 0.0 } else { acc.total_ns as f64 / acc.received as f64 / 1e6 };
        let mut recent = acc.recent_ns.clone();
        recent.sort_unstable();
        let p99 = if recent.is_empty() {
            0.0
        } else {
            recent[((recent.len() as f64 * 0.99).ceil() as usize).clamp(1, recent.len()) - 1] as f64 / 1e6
        };
        VerticleStats {
            name: self.name.clone(),
            class: self.class,
            received: acc.received,
            published: acc.published,
            dropped: self.queue.dropped(),
            errors: acc.errors,
            mean_handler_ms: mean,
            p99_handler_ms: p99,
        }
    }
}

struct Slot {
    deployed: Arc<Deployed>,
    thread: Option<JoinHandle<()>>,
}

/// Handle to a deployed verticle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerticleHandle {
    name: String,
}

impl VerticleHandle {
    pub fn name(&self) -> &str {
        &self.name
    }
}

pub struct Rts {
    bus: EventBus,
    mode: RtsMode,
    mailbox_depth: usize,
    slots: Mutex<Vec<Slot>>,
}

impl Rts {
    pub fn new(mode: RtsMode, clock: Arc<dyn Clock>) -> Self {
        Self::with_mailbox_depth(mode, clock, DEFAULT_MAILBOX_DEPTH)
    }

    pub fn with_mailbox_depth(mode: RtsMode, clock: Arc<dyn Clock>, mailbox_depth: usize) -> Self {
        Self { bus: EventBus::new(clock), mode, mailbox_depth, slots: Mutex::new(Vec::new()) }
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn mode(&self) -> RtsMode {
        self.mode
    }

    pub fn deploy(&self, spec: VerticleSpec) -> Result<VerticleHandle, RtsError> {
        let mut slots = self.slots.lock().unwrap();
        if slots.iter().any(|s| s.deployed.name == spec.name) {
            return Err(RtsError::DuplicateName(spec.name));
        }
        let queue = match spec.source {
            Source::Bus(addrs) => {
                let refs: Vec<&str> = addrs.iter().map(String::as_str).collect();
                Queue::Bus(self.bus.subscribe(&refs, self.mailbox_depth)?)
            }
            Source::Broker(sub) => Queue::Broker(sub),
        };
        let deployed = Arc::new(Deployed {
            name: spec.name.clone(),
            class: spec.class,
            verticle: Mutex::new(spec.verticle),
            queue,
            stats: Mutex::new(StatsAcc::default()),
            stopped: AtomicBool::new(false),
        });
        let thread = match self.mode {
            RtsMode::Inline => None,
            RtsMode::Threaded => {
                let d = deployed.clone();
                let bus = self.bus.clone();
                Some(
                    std::thread::Builder::new()
                        .name(format!("verticle-{}", spec.name))
                        .spawn(move || run_verticle(&d, &bus))
                        .expect("spawn verticle thread"),
                )
            }
        };
        slots.push(Slot { deployed, thread });
        Ok(VerticleHandle { name: spec.name })
    }

    /// Stops delivery to the named verticle. Nothing queued for it is
    /// handled afterwards; other verticles are untouched.
    pub fn undeploy(&self, name: &str) -> Result<(), RtsError> {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            let idx = slots
                .iter()
                .position(|s| s.deployed.name == name)
                .ok_or_else(|| RtsError::UnknownVerticle(name.to_string()))?;
            slots.remove(idx)
        };
        stop(slot);
        Ok(())
    }

    /// Inline mode: runs verticles until every mailbox is empty and returns
    /// the number of inputs handled. Threaded mode: returns 0.
    pub fn pump(&self) -> usize {
        if self.mode == RtsMode::Threaded {
            return 0;
        }
        let mut handled = 0;
        loop {
            let deployed: Vec<Arc<Deployed>> =
                self.slots.lock().unwrap().iter().map(|s| s.deployed.clone()).collect();
            let mut progressed = false;
            for d in &deployed {
                while let Some(item) = d.queue.try_next() {
                    if d.stopped.load(Ordering::Acquire) {
                        break;
                    }
                    d.process(item, &self.bus);
                    handled += 1;
                    progressed = true;
                }
            }
            if !progressed {
                return handled;
            }
        }
    }

    /// Waits until every accepted input has been handled or dropped, or the
    /// timeout passes. Returns whether the runtime went idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        if self.mode == RtsMode::Inline {
            self.pump();
            return true;
        }
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            let idle = self.slots.lock().unwrap().iter().all(|s| s.deployed.is_idle());
            if idle {
                return true;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        false
    }

    pub fn stats(&self) -> Vec<VerticleStats> {
        self.slots.lock().unwrap().iter().map(|s| s.deployed.stats()).collect()
    }

    pub fn verticle_names(&self) -> Vec<String> {
        self.slots.lock().unwrap().iter().map(|s| s.deployed.name.clone()).collect()
    }

    pub fn shutdown(&self) {
        self.bus.shutdown();
        let slots: Vec<Slot> = self.slots.lock().unwrap().drain(..).collect();
        for s in slots {
            stop(s);
        }
    }
}

impl Drop for Rts {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn stop(slot: Slot) {
    slot.deployed.stopped.store(true, Ordering::Release);
    slot.deployed.queue.close();
    if let Some(t) = slot.thread {
        let _ = t.join();
    }
}

fn run_verticle(d: &Deployed, bus: &EventBus) {
    loop {
        if d.stopped.load(Ordering::Acquire) {
            return;
        }
        match d.queue.next_timeout(Duration::from_millis(50)) {
            Some(item) => {
                if d.stopped.load(Ordering::Acquire) {
                    return;
                }
                d.process(item, bus);
            }
            None if d.queue.is_closed() => return,
            None => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemClock;
    use serde_json::json;

    struct Counter(Arc<Mutex<Vec<u64>>>);

    impl Verticle for Counter {
        fn handle(&mut self, input: Input<'_>, ctx: &mut Context<'_>) {
            if let Input::Bus(e) = input {
                self.0.lock().unwrap().push(e.seq);
                ctx.publish("counted", json!(e.seq));
            }
        }
    }

    fn counter() -> (Counter, Arc<Mutex<Vec<u64>>>) {
        let seen = Arc::new(Mutex::new(Vec::new()));
        (Counter(seen.clone()), seen)
    }

    #[test]
    fn inline_deploy_publish_undeploy() {
        let rts = Rts::new(RtsMode::Inline, Arc::new(SystemClock));
        let (c, seen) = counter();
        rts.deploy(VerticleSpec::on_bus("c", VerticleClass::Analysis, &["in"], c)).unwrap();
        let (c2, _) = counter();
        assert_eq!(
            rts.deploy(VerticleSpec::on_bus("c", VerticleClass::Analysis, &["in"], c2)).unwrap_err(),
            RtsError::DuplicateName("c".into())
        );
        rts.bus().publish("in", json!(1)).unwrap();
        assert_eq!(rts.pump(), 1);
        assert_eq!(*seen.lock().unwrap(), vec![1]);
        let st = &rts.stats()[0];
        assert_eq!((st.received, st.published), (1, 1));
        rts.undeploy("c").unwrap();
        rts.bus().publish("in", json!(2)).unwrap();
        assert_eq!(rts.pump(), 0);
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn threaded_delivers_in_seq_order() {
        let rts = Rts::new(RtsMode::Threaded, Arc::new(SystemClock));
        let (c, seen) = counter();
        rts.deploy(VerticleSpec::on_bus("c", VerticleClass::Analysis, &["in"], c)).unwrap();
        let bus = rts.bus().clone();
        let pubs: Vec<_> = (0..4)
            .map(|_| {
                let b = bus.clone();
                std::thread::spawn(move || {
                    for i in 0..250 {
                        b.publish("in", json!(i)).unwrap();
                    }
                })
            })
            .collect();
        for p in pubs {
            p.join().unwrap();
        }
        assert!(rts.wait_idle(Duration::from_secs(5)));
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 1000);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
    }
}
