use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::location::Location;
use super::timestamp::Timestamp;

/// Keys the platform owns at the top level of a serialised envelope.
pub const RESERVED_KEYS: &[&str] = &[
    "acp_id",
    "acp_ts",
    "acp_type",
    "acp_event",
    "acp_event_value",
    "acp_confidence",
    "acp_location",
    "payload_cooked",
];

/// Standardised feature names usable in `payload_cooked`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    /// parts per million
    Co2,
    /// degrees Celsius
    Temperature,
    /// relative humidity, percent
    Humidity,
    /// lux
    Light,
    /// motion count
    Motion,
    /// watts
    Power,
    /// kilograms
    Weight,
    /// people count
    Occupancy,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::Co2,
        Feature::Temperature,
        Feature::Humidity,
        Feature::Light,
        Feature::Motion,
        Feature::Power,
        Feature::Weight,
        Feature::Occupancy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Co2 => "co2",
            Feature::Temperature => "temperature",
            Feature::Humidity => "humidity",
            Feature::Light => "light",
            Feature::Motion => "motion",
            Feature::Power => "power",
            Feature::Weight => "weight",
            Feature::Occupancy => "occupancy",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown feature {0:?}")]
pub struct UnknownFeature(pub String);

impl FromStr for Feature {
    type Err = UnknownFeature;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| UnknownFeature(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("acp_confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("original payload key {key:?} conflicts with the platform value")]
    ReservedConflict { key: String },
    #[error("envelope JSON is not an object")]
    NotAnObject,
    #[error("envelope field {0}: {1}")]
    Field(&'static str, String),
}

/// The normalised message exchanged by every stage.
///
/// The serialised form is the original payload with the platform fields
/// added beside it, so every original key survives value-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    acp_id: String,
    acp_ts: Timestamp,
    acp_type: String,
    payload_original: Map<String, Value>,
    payload_cooked: BTreeMap<Feature, f64>,
    acp_event: Option<String>,
    acp_event_value: Option<String>,
    acp_confidence: Option<f64>,
    acp_location: Option<Location>,
}

#[derive(Debug, Clone)]
pub struct EnvelopeBuilder {
    inner: Envelope,
}

impl EnvelopeBuilder {
    pub fn cooked(mut self, feature: Feature, value: f64) -> Self {
        self.inner.payload_cooked.insert(feature, value);
        self
    }

    pub fn cooked_all(mut self, values: impl IntoIterator<Item = (Feature, f64)>) -> Self {
        self.inner.payload_cooked.extend(values);
        self
    }

    pub fn event(mut self, event: &str, value: Option<&str>) -> Self {
        self.inner.acp_event = Some(event.to_string());
        self.inner.acp_event_value = value.map(str::to_string);
        self
    }

    pub fn confidence(mut self, c: f64) -> Self {
        self.inner.acp_confidence = Some(c);
        self
    }

    pub fn location(mut self, loc: Location) -> Self {
        self.inner.acp_location = Some(loc);
        self
    }

    pub fn build(self) -> Result<Envelope, EnvelopeError> {
        let env = self.inner;
        if let Some(c) = env.acp_confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(EnvelopeError::Confidence(c));
            }
        }
        // an original key may shadow a platform key only if both agree
        let platform = env.platform_fields();
        for (k, v) in &platform {
            if let Some(orig) = env.payload_original.get(k) {
                let agrees = if k == "payload_cooked" {
                    cooked_agrees(orig, v)
                } else {
                    json_equal(orig, v)
                };
                if !agrees {
                    return Err(EnvelopeError::ReservedConflict { key: k.clone() });
                }
            }
        }
        Ok(env)
    }
}

fn cooked_agrees(orig: &Value, ours: &Value) -> bool {
    match (orig.as_object(), ours.as_object()) {
        (Some(o), Some(p)) => o.iter().all(|(k, v)| p.get(k).is_some_and(|pv| json_equal(v, pv))),
        _ => false,
    }
}

/// JSON equality treating `415` and `415.0` as the same number.
fn json_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_equal(v, w)))
        }
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(v, w)| json_equal(v, w))
        }
        _ => a == b,
    }
}

/// Integral values print without a trailing `.0` so cooked numbers read
/// like the vendor payloads they came from.
pub fn number_value(v: f64) -> Value {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::from(v as i64)
    } else {
        serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
    }
}

impl Envelope {
    pub fn builder(
        acp_id: &str,
        acp_ts: Timestamp,
        acp_type: &str,
        payload_original: Map<String, Value>,
    ) -> EnvelopeBuilder {
        EnvelopeBuilder {
            inner: Envelope {
                acp_id: acp_id.to_string(),
                acp_ts,
                acp_type: acp_type.to_string(),
                payload_original,
                payload_cooked: BTreeMap::new(),
                acp_event: None,
                acp_event_value: None,
                acp_confidence: None,
                acp_location: None,
            },
        }
    }

    pub fn acp_id(&self) -> &str {
        &self.acp_id
    }

    pub fn acp_ts(&self) -> &Timestamp {
        &self.acp_ts
    }

    pub fn acp_type(&self) -> &str {
        &self.acp_type
    }

    pub fn payload_original(&self) -> &Map<String, Value> {
        &self.payload_original
    }

    pub fn payload_cooked(&self) -> &BTreeMap<Feature, f64> {
        &self.payload_cooked
    }

    pub fn cooked(&self, feature: Feature) -> Option<f64> {
        self.payload_cooked.get(&feature).copied()
    }

    pub fn acp_event(&self) -> Option<&str> {
        self.acp_event.as_deref()
    }

    pub fn acp_event_value(&self) -> Option<&str> {
        self.acp_event_value.as_deref()
    }

    pub fn acp_confidence(&self) -> Option<f64> {
        self.acp_confidence
    }

    pub fn acp_location(&self) -> Option<&Location> {
        self.acp_location.as_ref()
    }

    fn platform_fields(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("acp_id".into(), Value::String(self.acp_id.clone()));
        m.insert("acp_ts".into(), Value::String(self.acp_ts.to_string()));
        m.insert("acp_type".into(), Value::String(self.acp_type.clone()));
        let cooked: Map<String, Value> = self
            .payload_cooked
            .iter()
            .map(|(f, v)| (f.name().to_string(), number_value(*v)))
            .collect();
        m.insert("payload_cooked".into(), Value::Object(cooked));
        if let Some(e) = &self.acp_event {
            m.insert("acp_event".into(), Value::String(e.clone()));
        }
        if let Some(e) = &self.acp_event_value {
            m.insert("acp_event_value".into(), Value::String(e.clone()));
        }
        if let Some(c) = self.acp_confidence {
            m.insert("acp_confidence".into(), number_value(c));
        }
        if let Some(l) = &self.acp_location {
            m.insert("acp_location".into(), serde_json::to_value(l).unwrap_or(Value::Null));
        }
        m
    }

    /// Original keys value-exact, platform keys added beside them.
    pub fn to_json(&self) -> Value {
        let mut m = self.payload_original.clone();
        for (k, v) in self.platform_fields() {
            if !m.contains_key(&k) {
                m.insert(k, v);
            }
        }
        Value::Object(m)
    }

    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }

    /// Inverse of [`Envelope::to_json`]: reserved keys become platform
    /// fields and everything else is the original payload.
    pub fn from_json(value: &Value) -> Result<Self, EnvelopeError> {
        let obj = value.as_object().ok_or(EnvelopeError::NotAnObject)?;
        let field = |k: &'static str| {
            obj.get(k)
                .and_then(Value::as_str)
                .ok_or_else(|| EnvelopeError::Field(k, "missing or not a string".into()))
        };
        let acp_ts = Timestamp::parse(field("acp_ts")?)
            .map_err(|e| EnvelopeError::Field("acp_ts", e.to_string()))?;
        let original: Map<String, Value> = obj
            .iter()
            .filter(|(k, _)| !RESERVED_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut b = Envelope::builder(field("acp_id")?, acp_ts, field("acp_type")?, original);
        if let Some(cooked) = obj.get("payload_cooked").and_then(Value::as_object) {
            for (k, v) in cooked {
                let f: Feature =
                    k.parse().map_err(|e: UnknownFeature| EnvelopeError::Field("payload_cooked", e.to_string()))?;
                let n = v
                    .as_f64()
                    .ok_or_else(|| EnvelopeError::Field("payload_cooked", format!("{k} not numeric")))?;
                b = b.cooked(f, n);
            }
        }
        if let Some(e) = obj.get("acp_event").and_then(Value::as_str) {
            b = b.event(e, obj.get("acp_event_value").and_then(Value::as_str));
        }
        if let Some(c) = obj.get("acp_confidence").and_then(Value::as_f64) {
            b = b.confidence(c);
        }
        if let Some(l) = obj.get("acp_location") {
            let loc: Location = serde_json::from_value(l.clone())
                .map_err(|e| EnvelopeError::Field("acp_location", e.to_string()))?;
            b = b.location(loc);
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn listing3_raw() -> Map<String, Value> {
        json!({"co2":415,"device":"elsys_co2","humidity":36,"light":0,"motion":2,"temperature":15.3,"vdd":3659})
            .as_object()
            .unwrap()
            .clone()
    }

    #[test]
    fn serialisation_keeps_original_keys() {
        let raw = listing3_raw();
        let env = Envelope::builder("elsys-co2-041ba9", Timestamp::parse("1589469979.861816").unwrap(), "elsys-co2", raw.clone())
            .cooked(Feature::Co2, 415.0)
            .cooked(Feature::Temperature, 15.3)
            .build()
            .unwrap();
        let v = env.to_json();
        for (k, val) in &raw {
            assert_eq!(&v[k], val);
        }
        assert_eq!(v["payload_cooked"]["co2"].to_string(), "415");
        assert_eq!(v["acp_ts"], "1589469979.861816");
        let back = Envelope::from_json(&v).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn confidence_range() {
        let r = Envelope::builder("a", Timestamp::from_secs(1), "t", Map::new()).confidence(1.5).build();
        assert_eq!(r, Err(EnvelopeError::Confidence(1.5)));
    }

    #[test]
    fn conflicting_reserved_key() {
        let mut raw = Map::new();
        raw.insert("acp_id".into(), json!("other"));
        let r = Envelope::builder("mine", Timestamp::from_secs(1), "t", raw.clone()).build();
        assert!(matches!(r, Err(EnvelopeError::ReservedConflict { .. })));
        raw.insert("acp_id".into(), json!("mine"));
        assert!(Envelope::builder("mine", Timestamp::from_secs(1), "t", raw).build().is_ok());
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
        assert!("vdd".parse::<Feature>().is_err());
    }
}
