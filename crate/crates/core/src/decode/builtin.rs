use chrono::NaiveDateTime;
use serde_json::Value;

use super::{sensor_timestamp, DecodeError, Decoded, Decoder, RawPayload};
use crate::broker::{Topic, TopicFilter};
use crate::model::{Feature, Location, Timestamp};

fn filter(s: &str) -> TopicFilter {
    TopicFilter::parse(s).expect("built-in filter")
}

fn segment(topic: &Topic, idx: usize) -> Option<&str> {
    topic.segments().nth(idx)
}

/// Optional vendor-distinguished alert: an explicit `event` key.
fn explicit_event(raw: &RawPayload) -> Option<(String, Option<String>)> {
    let e = raw.str_field("event")?;
    Some((e.to_string(), raw.str_field("event_value").map(str::to_string)))
}

/// Tasmota-style smart plug: device id in the topic, `ENERGY.Power` in watts.
pub struct SmartplugDecoder {
    filter: TopicFilter,
}

impl SmartplugDecoder {
    pub fn new() -> Self {
        Self { filter: filter("csn/+/tele/SENSOR") }
    }
}

impl Default for SmartplugDecoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Decoder for SmartplugDecoder {
    fn name(&self) -> &str {
        "smartplug"
    }

    fn filter(&self) -> &TopicFilter {
        &self.filter
    }

    fn transform(&self, topic: &Topic, raw: &RawPayload) -> Result<Decoded, DecodeError> {
        let acp_id = segment(topic, 1)
            .ok_or_else(|| DecodeError::DecodeFailure("no device id in topic".into()))?;
        let power = raw
            .fields
            .get("ENERGY")
            .and_then(|e| e.get("Power"))
            .and_then(Value::as_f64)
            .or_else(|| raw.num_field("power"));
        // Tasmota reports local wall time without a zone; deployments run it in UTC
        let sensor_ts = raw
            .str_field("Time")
            .and_then(|t| NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S").ok())
            .and_then(|dt| u64::try_from(dt.and_utc().timestamp()).ok())
            .map(Timestamp::from_secs)
            .or_else(|| sensor_timestamp(raw, "ts"));
        Ok(Decoded {
            acp_id: acp_id.to_string(),
            acp_type: "smartplug".into(),
            cooked: power.map(|p| (Feature::Power, p)).into_iter().collect(),
            sensor_ts,
            event: explicit_event(raw),
            ..Default::default()
        })
    }
}

/// Elsys ERS-CO2 over LoRaWAN. The device id travels in the message body
/// (`dev_id`); the topic's device segment is a fallback.
pub struct ElsysCo2Decoder {
    filter: TopicFilter,
}

impl ElsysCo2Decoder {
    pub fn new() -> Self {
        Self { filter: filter("ttn/+/devices/+/up") }
    }
}

impl Default for ElsysCo2Decoder {
    fn default() -> Self {
        Self::new()
    }
}

const ELSYS_FEATURES: [Feature; 5] =
    [Feature::Co2, Feature::Humidity, Feature::Light, Feature::Motion, Feature::Temperature];

impl Decoder for ElsysCo2Decoder {
    fn name(&self) -> &str {
        "elsys-co2"
    }

    fn filter(&self) -> &TopicFilter {
        &self.filter
    }

    fn matches(&self, _topic: &Topic, raw: &RawPayload) -> bool {
        raw.num_field("co2").is_some()
    }

    fn transform(&self, topic: &Topic, raw: &RawPayload) -> Result<Decoded, DecodeError> {
        let acp_id = raw
            .str_field("dev_id")
            .or_else(|| segment(topic, 3))
            .ok_or_else(|| DecodeError::DecodeFailure("no device id".into()))?;
        let cooked = ELSYS_FEATURES
            .iter()
            .filter_map(|f| raw.num_field(f.name()).map(|v| (*f, v)))
            .collect();
        Ok(Decoded {
            acp_id: acp_id.to_string(),
            acp_type: "elsys-co2".into(),
            cooked,
            sensor_ts: sensor_timestamp(raw, "ts"),
            ..Default::default()
        })
    }
}

/// The coffee-pot sensor node: pot weight plus grinder and brewer power in
/// one message, stamped by the node itself.
pub struct CoffeeNodeDecoder {
    filter: TopicFilter,
}

impl CoffeeNodeDecoder {
    pub fn new() -> Self {
        Self { filter: filter("csn/+/coffee") }
    }
}

impl Default for CoffeeNodeDecoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Decoder for CoffeeNodeDecoder {
    fn name(&self) -> &str {
        "coffee-node"
    }

    fn filter(&self) -> &TopicFilter {
        &self.filter
    }

    fn transform(&self, topic: &Topic, raw: &RawPayload) -> Result<Decoded, DecodeError> {
        let acp_id = raw
            .str_field("node")
            .or_else(|| segment(topic, 1))
            .ok_or_else(|| DecodeError::DecodeFailure("no node id".into()))?;
        let mut cooked = Vec::new();
        if let Some(w) = raw.num_field("weight") {
            if w < 0.0 {
                return Err(DecodeError::DecodeFailure(format!("negative weight {w}")));
            }
            cooked.push((Feature::Weight, w));
        }
        let grinder = raw.num_field("grinder_power");
        let brewer = raw.num_field("brewer_power");
        if grinder.is_some() || brewer.is_some() {
            cooked.push((Feature::Power, grinder.unwrap_or(0.0) + brewer.unwrap_or(0.0)));
        }
        Ok(Decoded {
            acp_id: acp_id.to_string(),
            acp_type: "coffee-node".into(),
            cooked,
            sensor_ts: sensor_timestamp(raw, "ts"),
            event: explicit_event(raw),
            ..Default::default()
        })
    }
}

/// Fallback for anything no other decoder claims. Registry-named numeric
/// keys become cooked features; `acp_*` keys already present are honoured.
pub struct PassthroughDecoder {
    filter: TopicFilter,
}

impl PassthroughDecoder {
    pub fn new() -> Self {
        Self { filter: filter("#") }
    }
}

impl Default for PassthroughDecoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Decoder for PassthroughDecoder {
    fn name(&self) -> &str {
        "passthrough"
    }

    fn filter(&self) -> &TopicFilter {
        &self.filter
    }

    fn transform(&self, topic: &Topic, raw: &RawPayload) -> Result<Decoded, DecodeError> {
        let acp_id = raw
            .str_field("acp_id")
            .map(str::to_string)
            .unwrap_or_else(|| topic.as_str().replace('/', "-"));
        let acp_type = raw.str_field("acp_type").unwrap_or("unknown").to_string();
        let mut cooked: Vec<(Feature, f64)> = Feature::ALL
            .iter()
            .filter_map(|f| raw.num_field(f.name()).map(|v| (*f, v)))
            .collect();
        if let Some(prev) = raw.fields.get("payload_cooked").and_then(Value::as_object) {
            for (k, v) in prev {
                if let (Ok(f), Some(n)) = (k.parse::<Feature>(), v.as_f64()) {
                    cooked.retain(|(g, _)| *g != f);
                    cooked.push((f, n));
                }
            }
        }
        let event = match raw.str_field("acp_event") {
            Some(e) => Some((e.to_string(), raw.str_field("acp_event_value").map(str::to_string))),
            None => explicit_event(raw),
        };
        let location = match raw.fields.get("acp_location") {
            Some(v) => Some(
                serde_json::from_value::<Location>(v.clone())
                    .map_err(|e| DecodeError::DecodeFailure(format!("acp_location: {e}")))?,
            ),
            None => None,
        };
        let sensor_ts = if raw.fields.contains_key("acp_ts") {
            Some(
                sensor_timestamp(raw, "acp_ts")
                    .ok_or_else(|| DecodeError::DecodeFailure("unparseable acp_ts".into()))?,
            )
        } else {
            sensor_timestamp(raw, "ts")
        };
        Ok(Decoded {
            acp_id,
            acp_type,
            cooked,
            sensor_ts,
            event,
            confidence: raw.num_field("acp_confidence"),
            location,
        })
    }
}
