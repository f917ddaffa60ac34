use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use serde_json::json;

use super::{Context, Input, Verticle, ROUTE_TOPIC_PREFIX};
use crate::broker::Broker;

pub const DEFAULT_PEER_BUFFER: usize = 1024;

/// A remote system reachable through its broker.
#[derive(Clone)]
pub struct RouterPeer {
    pub id: String,
    pub broker: Broker,
    up: Arc<AtomicBool>,
}

impl RouterPeer {
    pub fn new(id: &str, broker: Broker) -> Self {
        Self { id: id.to_string(), broker, up: Arc::new(AtomicBool::new(true)) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PeerStats {
    pub id: String,
    pub up: bool,
    pub sent: u64,
    pub buffered: usize,
    pub dropped: u64,
}

struct PeerState {
    peer: RouterPeer,
    buffer: VecDeque<(String, Vec<u8>)>,
    sent: u64,
    dropped: u64,
}

impl PeerState {
    fn flush(&mut self) {
        while self.peer.up.load(Ordering::Acquire) {
            let Some((topic, payload)) = self.buffer.pop_front() else { break };
            match self.peer.broker.publish(&topic, payload.clone()) {
                Ok(_) => self.sent += 1,
                Err(_) => {
                    self.buffer.push_front((topic, payload));
                    break;
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct RouterHandle {
    peers: Arc<Mutex<Vec<PeerState>>>,
}

impl RouterHandle {
    /// Simulates a link outage. While down, outgoing events are buffered up
    /// to the bound and then dropped oldest-first.
    pub fn set_peer_up(&self, id: &str, up: bool) {
        let mut peers = self.peers.lock().unwrap();
        for p in peers.iter_mut().filter(|p| p.peer.id == id) {
            p.peer.up.store(up, Ordering::Release);
            if up {
                p.flush();
            }
        }
    }

    pub fn stats(&self) -> Vec<PeerStats> {
        self.peers
            .lock()
            .unwrap()
            .iter()
            .map(|p| PeerStats {
                id: p.peer.id.clone(),
                up: p.peer.up.load(Ordering::Acquire),
                sent: p.sent,
                buffered: p.buffer.len(),
                dropped: p.dropped,
            })
            .collect()
    }
}

/// Outbound verticle re-publishing bus events to peer systems. Each event
/// carries its origin and the systems it has visited; it is never sent to a
/// system already on that path, and receivers drop repeats.
pub struct MessageRouter {
    system_id: String,
    buffer_cap: usize,
    peers: Arc<Mutex<Vec<PeerState>>>,
}

impl MessageRouter {
    pub fn new(system_id: &str, peers: Vec<RouterPeer>, buffer_cap: usize) -> (Self, RouterHandle) {
        let peers = Arc::new(Mutex::new(
            peers.into_iter().map(|peer| PeerState { peer, buffer: VecDeque::new(), sent: 0, dropped: 0 }).collect(),
        ));
        (
            Self { system_id: system_id.to_string(), buffer_cap: buffer_cap.max(1), peers: peers.clone() },
            RouterHandle { peers },
        )
    }
}

impl Verticle for MessageRouter {
    fn handle(&mut self, input: Input<'_>, _ctx: &mut Context<'_>) {
        let Input::Bus(ev) = input else { return };
        let (origin, origin_seq, mut path) = match &ev.route {
            Some(r) => (r.origin.clone(), r.origin_seq, r.path.clone()),
            None => (self.system_id.clone(), ev.seq, Vec::new()),
        };
        if !path.contains(&self.system_id) {
            path.push(self.system_id.clone());
        }
        let topic = format!("{ROUTE_TOPIC_PREFIX}/{origin}/{}", ev.address.replace('.', "/"));
        let mut peers = self.peers.lock().unwrap();
        for p in peers.iter_mut().filter(|p| !path.contains(&p.peer.id)) {
            let payload = json!({
                "address": ev.address,
                "origin": origin,
                "origin_seq": origin_seq,
                "path": path,
                "body": ev.body.to_json(),
            })
            .to_string()
            .into_bytes();
            if p.buffer.len() >= self.buffer_cap {
                p.buffer.pop_front();
                p.dropped += 1;
            }
            p.buffer.push_back((topic.clone(), payload));
            p.flush();
        }
    }
}
