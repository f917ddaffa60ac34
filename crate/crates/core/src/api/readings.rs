use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde_json::{json, Map, Value};

use crate::model::{number_value, Envelope, Timestamp, RESERVED_KEYS};
use crate::rts::{read_shards, sensor_shard_path, Context, Input, Verticle};

/// Payload keys that describe the message rather than the reading.
const NON_FEATURE_KEYS: &[&str] = &["ts"];

/// `{acp_id, acp_ts, features}`: the original payload fields (minus
/// platform keys) with decoded feature values laid over them.
pub fn reading_json(env: &Envelope) -> Value {
    let mut features: Map<String, Value> = env
        .payload_original()
        .iter()
        .filter(|(k, _)| !RESERVED_KEYS.contains(&k.as_str()) && !NON_FEATURE_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    for (f, v) in env.payload_cooked() {
        features.insert(f.name().to_string(), number_value(*v));
    }
    json!({"acp_id": env.acp_id(), "acp_ts": env.acp_ts().to_string(), "features": features})
}

/// Most recent envelope per sensor, by sensor timestamp; on equal
/// timestamps the later arrival wins.
#[derive(Debug, Clone, Default)]
pub struct LatestReadings {
    inner: Arc<RwLock<BTreeMap<String, Envelope>>>,
}

impl LatestReadings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&self, env: &Envelope) {
        let mut m = self.inner.write().unwrap();
        match m.get(env.acp_id()) {
            Some(cur) if cur.acp_ts() > env.acp_ts() => {}
            _ => {
                m.insert(env.acp_id().to_string(), env.clone());
            }
        }
    }

    pub fn get(&self, acp_id: &str) -> Option<Envelope> {
        self.inner.read().unwrap().get(acp_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> BTreeMap<String, Envelope> {
        self.inner.read().unwrap().clone()
    }

    /// Rebuilt from the per-sensor day shards under `root`.
    pub fn from_shards(root: &Path) -> std::io::Result<(Self, usize)> {
        let (envs, bad) = read_shards(&root.join("sensors"))?;
        let latest = Self::new();
        for e in &envs {
            latest.observe(e);
        }
        Ok((latest, bad))
    }
}

/// Storage verticle keeping [`LatestReadings`] current.
pub struct LatestVerticle {
    latest: LatestReadings,
}

impl LatestVerticle {
    pub fn new(latest: LatestReadings) -> Self {
        Self { latest }
    }
}

impl Verticle for LatestVerticle {
    fn handle(&mut self, input: Input<'_>, _ctx: &mut Context<'_>) {
        if let Input::Bus(ev) = input {
            if let Some(env) = ev.body.envelope() {
                self.latest.observe(env);
            }
        }
    }
}

/// Readings of one sensor with `from <= acp_ts <= to`, read day by day
/// from its shards in timestamp order.
pub fn readings_between(root: &Path, acp_id: &str, from: &Timestamp, to: &Timestamp) -> std::io::Result<Vec<Envelope>> {
    let mut out = Vec::new();
    let mut day = Timestamp::from_secs(from.seconds() - from.seconds() % 86_400);
    while day <= *to {
        let path: PathBuf = sensor_shard_path(root, acp_id, &day);
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                let Some(env) = serde_json::from_str(&line).ok().and_then(|v| Envelope::from_json(&v).ok()) else {
                    continue;
                };
                if env.acp_id() == acp_id && env.acp_ts() >= from && env.acp_ts() <= to {
                    out.push(env);
                }
            }
        }
        day = day.plus_secs(86_400);
    }
    out.sort_by(|a, b| a.acp_ts().cmp(b.acp_ts()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::DecoderManager;

    #[test]
    fn listing_reading_shape() {
        let raw = json!({"device": "elsys_co2", "co2": 415, "humidity": 36, "light": 0, "motion": 2, "temperature": 15.3, "vdd": 3659});
        let out = DecoderManager::with_builtin()
            .decode(
                "ttn/acp/devices/elsys-co2-041ba9/up",
                raw.to_string().as_bytes(),
                &Timestamp::parse("1589469979.861816").unwrap(),
            )
            .unwrap();
        let body = serde_json::to_string(&reading_json(&out.envelope)).unwrap();
        assert_eq!(
            body,
            r#"{"acp_id":"elsys-co2-041ba9","acp_ts":"1589469979.861816","features":{"co2":415,"device":"elsys_co2","humidity":36,"light":0,"motion":2,"temperature":15.3,"vdd":3659}}"#
        );
    }

    #[test]
    fn latest_prefers_newer_sensor_time() {
        let l = LatestReadings::new();
        let mk = |t: u64| Envelope::builder("s", Timestamp::from_secs(t), "x", Map::new()).build().unwrap();
        l.observe(&mk(5));
        l.observe(&mk(3));
        assert_eq!(l.get("s").unwrap().acp_ts(), &Timestamp::from_secs(5));
        l.observe(&mk(7));
        assert_eq!(l.get("s").unwrap().acp_ts(), &Timestamp::from_secs(7));
    }
}
