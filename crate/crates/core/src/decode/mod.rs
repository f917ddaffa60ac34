//! Decoder manager: pluggable decoders that turn raw broker messages into
//! envelopes. Decoders only ever add fields; the raw payload is kept whole.

mod builtin;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use base64::Engine as _;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::broker::{Topic, TopicFilter};
use crate::model::{Envelope, Feature, Location, Timestamp};

pub use builtin::{CoffeeNodeDecoder, ElsysCo2Decoder, PassthroughDecoder, SmartplugDecoder};

pub const DEADLETTER_TOPIC: &str = "platform/deadletter";

/// Key under which non-JSON bodies are kept in `payload_original`.
pub const RAW_BASE64_KEY: &str = "raw_base64";

/// Sensor clocks older than this relative to receipt are not trusted.
pub const MAX_SENSOR_AGE_SECS: u64 = 24 * 3600;
/// Sensor clocks further ahead than this are not trusted.
pub const MAX_SENSOR_LEAD_SECS: u64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("decoder name {0:?} already registered")]
    DuplicateName(String),
    #[error("decode failure: {0}")]
    DecodeFailure(String),
}

/// What a decoder extracts from a message; the manager turns it into an
/// envelope.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decoded {
    pub acp_id: String,
    pub acp_type: String,
    pub cooked: Vec<(Feature, f64)>,
    pub sensor_ts: Option<Timestamp>,
    pub event: Option<(String, Option<String>)>,
    pub confidence: Option<f64>,
    pub location: Option<Location>,
}

/// A raw body after the manager's first pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPayload {
    pub fields: Map<String, Value>,
    /// True when the body was not a JSON object and is held base64-encoded.
    pub opaque: bool,
}

impl RawPayload {
    pub fn parse(raw: &[u8]) -> Result<Self, DecodeError> {
        let first = raw.iter().find(|b| !b.is_ascii_whitespace()).copied();
        match serde_json::from_slice::<Value>(raw) {
            Ok(Value::Object(fields)) => Ok(Self { fields, opaque: false }),
            // bodies that look like JSON but do not parse are corrupt, not opaque
            Err(e) if matches!(first, Some(b'{') | Some(b'[')) => {
                Err(DecodeError::DecodeFailure(format!("malformed JSON body: {e}")))
            }
            _ => {
                let mut fields = Map::new();
                fields.insert(
                    RAW_BASE64_KEY.into(),
                    Value::String(base64::engine::general_purpose::STANDARD.encode(raw)),
                );
                Ok(Self { fields, opaque: true })
            }
        }
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).and_then(Value::as_str)
    }

    pub fn num_field(&self, key: &str) -> Option<f64> {
        self.fields.get(key).and_then(Value::as_f64)
    }
}

/// A plug-in decoder.
pub trait Decoder: Send + Sync {
    fn name(&self) -> &str;

    fn filter(&self) -> &TopicFilter;

    /// Extra content test applied after the topic filter matched.
    fn matches(&self, _topic: &Topic, _raw: &RawPayload) -> bool {
        true
    }

    fn transform(&self, topic: &Topic, raw: &RawPayload) -> Result<Decoded, DecodeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TsSource {
    Sensor,
    Platform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TsFlag {
    /// Sensor time older than [`MAX_SENSOR_AGE_SECS`].
    Stale,
    /// Sensor time ahead of receipt by more than [`MAX_SENSOR_LEAD_SECS`].
    Future,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub envelope: Envelope,
    pub ts_source: TsSource,
    /// Set when a sensor-supplied time was rejected.
    pub ts_flag: Option<TsFlag>,
    pub decoder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecoderStat {
    pub name: String,
    pub filter: String,
    pub matched: u64,
}

struct Registered {
    decoder: Arc<dyn Decoder>,
    matched: AtomicU64,
}

/// Holds the registered decoders plus the built-in passthrough fallback.
pub struct DecoderManager {
    decoders: Vec<Registered>,
    passthrough: Registered,
}

impl Default for DecoderManager {
    fn default() -> Self {
        Self::new()
    }
}

impl DecoderManager {
    /// Empty manager; only the passthrough fallback is active.
    pub fn new() -> Self {
        Self {
            decoders: Vec::new(),
            passthrough: Registered {
                decoder: Arc::new(PassthroughDecoder::new()),
                matched: AtomicU64::new(0),
            },
        }
    }

    /// Manager with the shipped decoders registered.
    pub fn with_builtin() -> Self {
        let mut m = Self::new();
        m.register(Arc::new(SmartplugDecoder::new())).unwrap();
        m.register(Arc::new(ElsysCo2Decoder::new())).unwrap();
        m.register(Arc::new(CoffeeNodeDecoder::new())).unwrap();
        m
    }

    pub fn register(&mut self, decoder: Arc<dyn Decoder>) -> Result<(), DecodeError> {
        let name = decoder.name();
        if name == self.passthrough.decoder.name() || self.decoders.iter().any(|r| r.decoder.name() == name) {
            return Err(DecodeError::DuplicateName(name.to_string()));
        }
        self.decoders.push(Registered { decoder, matched: AtomicU64::new(0) });
        Ok(())
    }

    fn select_registered(&self, topic: &Topic, raw: &RawPayload) -> &Registered {
        let mut best: Option<&Registered> = None;
        for r in &self.decoders {
            if !(r.decoder.filter().matches(topic) && r.decoder.matches(topic, raw)) {
                continue;
            }
            // strictly greater keeps the earliest registration on ties
            let better = match best {
                None => true,
                Some(b) => r.decoder.filter().literal_count() > b.decoder.filter().literal_count(),
            };
            if better {
                best = Some(r);
            }
        }
        best.unwrap_or(&self.passthrough)
    }

    pub fn select_decoder(&self, topic: &Topic, raw: &RawPayload) -> Arc<dyn Decoder> {
        self.select_registered(topic, raw).decoder.clone()
    }

    pub fn decode(&self, topic: &str, raw: &[u8], receipt_ts: &Timestamp) -> Result<DecodeOutcome, DecodeError> {
        let topic = Topic::parse(topic).map_err(|e| DecodeError::DecodeFailure(e.to_string()))?;
        let payload = RawPayload::parse(raw)?;
        let chosen = self.select_registered(&topic, &payload);
        chosen.matched.fetch_add(1, Ordering::Relaxed);
        let decoded = chosen.decoder.transform(&topic, &payload)?;

        let (acp_ts, ts_source, ts_flag) = match decoded.sensor_ts {
            Some(ts) if ts < receipt_ts.minus_secs(MAX_SENSOR_AGE_SECS) => {
                (receipt_ts.clone(), TsSource::Platform, Some(TsFlag::Stale))
            }
            Some(ts) if ts > receipt_ts.plus_secs(MAX_SENSOR_LEAD_SECS) => {
                (receipt_ts.clone(), TsSource::Platform, Some(TsFlag::Future))
            }
            Some(ts) => (ts, TsSource::Sensor, None),
            None => (receipt_ts.clone(), TsSource::Platform, None),
        };
        let mut b = Envelope::builder(&decoded.acp_id, acp_ts, &decoded.acp_type, payload.fields)
            .cooked_all(decoded.cooked);
        if let Some((e, v)) = &decoded.event {
            b = b.event(e, v.as_deref());
        }
        if let Some(c) = decoded.confidence {
            b = b.confidence(c);
        }
        if let Some(l) = decoded.location {
            b = b.location(l);
        }
        let envelope = b.build().map_err(|e| DecodeError::DecodeFailure(e.to_string()))?;
        Ok(DecodeOutcome {
            envelope,
            ts_source,
            ts_flag,
            decoder: chosen.decoder.name().to_string(),
        })
    }

    pub fn stats(&self) -> Vec<DecoderStat> {
        self.decoders
            .iter()
            .chain(std::iter::once(&self.passthrough))
            .map(|r| DecoderStat {
                name: r.decoder.name().to_string(),
                filter: r.decoder.filter().to_string(),
                matched: r.matched.load(Ordering::Relaxed),
            })
            .collect()
    }
}

/// Body published on [`DEADLETTER_TOPIC`].
pub fn dead_letter_record(topic: &str, raw: &[u8], error: &DecodeError, receipt_ts: &Timestamp) -> Value {
    json!({
        "topic": topic,
        "raw": base64::engine::general_purpose::STANDARD.encode(raw),
        "error": error.to_string(),
        "receipt_ts": receipt_ts.to_string(),
    })
}

/// Reads a sensor-supplied time from `"ts"`: a decimal string or a number
/// of epoch seconds.
pub(crate) fn sensor_timestamp(raw: &RawPayload, key: &str) -> Option<Timestamp> {
    match raw.fields.get(key)? {
        Value::String(s) => Timestamp::parse(s).ok(),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                Some(Timestamp::from_secs(u))
            } else {
                let f = n.as_f64()?;
                (f >= 0.0).then(|| Timestamp::from_micros((f * 1e6).round() as u64))
            }
        }
        _ => None,
    }
}
