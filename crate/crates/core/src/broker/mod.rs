//! In-process MQTT-style broker with wildcard subscriptions and bridging.

#[allow(clippy::module_inception)]
mod broker;
mod topic;

pub use broker::{
    bridge, BridgeConfig, BridgeDirection, BridgeHandle, Broker, BrokerError, BrokerId, BrokerMessage,
    BrokerRegistry, BrokerStats, ClientSession, LastWill, Payload, Subscription, DEFAULT_QUEUE_DEPTH,
};
pub use topic::{Topic, TopicError, TopicFilter};
