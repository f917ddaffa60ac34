//! Query API over the metadata store and stored readings, plus the floor
//! SVG and heatmap exporters and the assembled platform.

mod heatmap;
mod platform;
mod readings;
mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::metadata::{demo_site, CrateNode, Kind, MetadataStore, SharedStore, StoreError, VERB_SENSOR_DATA_READ};
use crate::model::{Feature, Timestamp};
use crate::privacy::check;

pub use heatmap::{idw, room_cells, Heatmap, HeatmapCell, HeatmapGrid, IDW_POWER};
pub use platform::{IngestLine, Platform, PlatformConfig};
pub use readings::{readings_between, reading_json, LatestReadings, LatestVerticle};
pub use svg::{floor_crates, format_coord, parse_floor_svg, render_floor_svg, SvgPolygon, DEFAULT_PX_PER_METRE};

pub const DEFAULT_CELL_SIZE: f64 = 0.5;
/// Metadata journal file name inside a data directory.
pub const METADATA_JOURNAL: &str = "metadata.ndjson";
/// Longest `/readings` range served, in days.
pub const MAX_RANGE_DAYS: u64 = 366;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } | StoreError::NoRecordAt { .. } => ApiError::NotFound(e.to_string()),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::NotFound(_) => 404,
            ApiError::BadRequest(_) | ApiError::UnknownFeature(_) => 400,
            ApiError::Forbidden(_) => 403,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiRequest {
    pub method: String,
    pub path: String,
    pub query: BTreeMap<String, String>,
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' if i + 2 < bytes.len() => {
                let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).ok();
                match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(b) => {
                        out.push(b);
                        i += 3;
                        continue;
                    }
                    None => out.push(b'%'),
                }
            }
            b'+' => out.push(b' '),
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

impl ApiRequest {
    /// Parses `path?k=v&...` for the given method.
    pub fn new(method: &str, target: &str) -> Self {
        let (path, q) = target.split_once('?').unwrap_or((target, ""));
        let query = q
            .split('&')
            .filter(|kv| !kv.is_empty())
            .map(|kv| {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                (percent_decode(k), percent_decode(v))
            })
            .collect();
        Self { method: method.to_string(), path: path.to_string(), query }
    }

    pub fn get(target: &str) -> Self {
        Self::new("GET", target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl ApiResponse {
    fn json(status: u16, v: &Value) -> Self {
        let mut body = serde_json::to_vec(v).expect("json values serialise");
        body.push(b'\n');
        Self { status, content_type: "application/json", body }
    }

    fn svg(body: String) -> Self {
        Self { status: 200, content_type: "image/svg+xml", body: body.into_bytes() }
    }

    fn error(e: &ApiError) -> Self {
        Self::json(e.status(), &json!({"error": e.to_string()}))
    }

    pub fn body_json(&self) -> Option<Value> {
        serde_json::from_slice(&self.body).ok()
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Request handlers. Read-only over a store snapshot and the latest-reading
/// cache, so one `Api` serves concurrent requests.
#[derive(Clone)]
pub struct Api {
    store: Arc<SharedStore>,
    latest: LatestReadings,
    data_dir: Option<PathBuf>,
    px_per_metre: f64,
    stats: Arc<dyn Fn() -> Value + Send + Sync>,
}

fn crate_node_json(n: &CrateNode) -> Value {
    let mut body = n.record.to_body();
    body.insert("acp_ts".into(), json!(n.acp_ts.to_string()));
    if !n.children.is_empty() {
        body.insert("children".into(), Value::Array(n.children.iter().map(crate_node_json).collect()));
    }
    Value::Object(body)
}

fn parse_ts(q: &BTreeMap<String, String>, key: &str) -> Result<Option<Timestamp>, ApiError> {
    q.get(key)
        .map(|s| Timestamp::parse(s).map_err(|e| ApiError::BadRequest(format!("{key}: {e}"))))
        .transpose()
}

impl Api {
    pub fn new(store: Arc<SharedStore>, latest: LatestReadings, data_dir: Option<PathBuf>) -> Self {
        Self { store, latest, data_dir, px_per_metre: DEFAULT_PX_PER_METRE, stats: Arc::new(|| json!({})) }
    }

    /// Rebuilds the read side from a data directory alone: the metadata
    /// journal (demo site if missing) and the stored sensor shards.
    /// Returns the API and the number of unreadable shard lines.
    pub fn from_data_dir(dir: &Path) -> Result<(Self, usize), String> {
        let journal = dir.join(METADATA_JOURNAL);
        let store = if journal.exists() { MetadataStore::load(&journal).map_err(|e| e.to_string())? } else { demo_site() };
        let (latest, bad) = LatestReadings::from_shards(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok((Self::new(Arc::new(SharedStore::new(store)), latest, Some(dir.to_path_buf())), bad))
    }

    pub fn with_scale(mut self, px_per_metre: f64) -> Self {
        self.px_per_metre = px_per_metre;
        self
    }

    /// Extra fields merged into `/stats`.
    pub fn with_stats(mut self, f: impl Fn() -> Value + Send + Sync + 'static) -> Self {
        self.stats = Arc::new(f);
        self
    }

    pub fn latest(&self) -> &LatestReadings {
        &self.latest
    }

    pub fn store(&self) -> Arc<MetadataStore> {
        self.store.snapshot()
    }

    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        if req.method != "GET" {
            return ApiResponse::error(&ApiError::BadRequest(format!("method {} not supported", req.method)));
        }
        match self.route(req) {
            Ok(r) => r,
            Err(e) => ApiResponse::error(&e),
        }
    }

    fn route(&self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let store = self.store.snapshot();
        let parts: Vec<&str> = req.path.trim_matches('/').split('/').collect();
        let subject = req.query.get("as").map(String::as_str);
        let may_read = |sensor: &str| -> bool {
            subject.is_none_or(|p| check(&store, p, VERB_SENSOR_DATA_READ, sensor).is_ok_and(|r| r.decision.is_allow()))
        };
        let forbid = |sensor: &str| ApiError::Forbidden(format!("{} may not read {sensor}", subject.unwrap_or("")));
        match parts.as_slice() {
            ["bim", "get", id] | ["bim", "get", id, _] => {
                let depth = match parts.get(3) {
                    Some(d) => Some(d.parse::<usize>().map_err(|_| ApiError::BadRequest(format!("bad depth {d:?}")))?),
                    None => Some(0),
                };
                let node = store.crate_tree(id, depth)?;
                Ok(ApiResponse::json(200, &crate_node_json(&node)))
            }
            ["sensors", "get", id] => {
                let s = store.sensor(id)?;
                if !may_read(id) {
                    return Err(forbid(id));
                }
                Ok(ApiResponse::json(200, &sensor_json(&store, &s.acp_id)?))
            }
            ["sensors", "bim", "get", crate_id] => {
                let sensors: Vec<Value> = store
                    .sensors_in_crate(crate_id, false)?
                    .into_iter()
                    .filter(|s| may_read(&s.acp_id))
                    .map(|s| sensor_json(&store, &s.acp_id))
                    .collect::<Result<_, _>>()?;
                Ok(ApiResponse::json(200, &json!({"crate_id": crate_id, "sensors": sensors})))
            }
            ["readings", "get", id] => {
                let known = store.sensor(id).is_ok();
                if known && !may_read(id) {
                    return Err(forbid(id));
                }
                let (from, to) = (parse_ts(&req.query, "from")?, parse_ts(&req.query, "to")?);
                if from.is_none() && to.is_none() {
                    return match self.latest.get(id) {
                        Some(env) => Ok(ApiResponse::json(200, &reading_json(&env))),
                        None => Err(ApiError::NotFound(format!("no readings for {id}"))),
                    };
                }
                if !known && subject.is_some() {
                    return Err(forbid(id));
                }
                let root = self.data_dir.as_ref().ok_or_else(|| ApiError::BadRequest("no reading history configured".into()))?;
                let to = to.unwrap_or_else(Timestamp::now);
                let from = from.unwrap_or_else(|| to.minus_secs(86_400));
                if from > to || to.seconds() - from.seconds() > MAX_RANGE_DAYS * 86_400 {
                    return Err(ApiError::BadRequest("range must be ordered and at most a year".into()));
                }
                let envs = readings_between(root, id, &from, &to).map_err(|e| ApiError::BadRequest(e.to_string()))?;
                let readings: Vec<Value> = envs.iter().map(reading_json).collect();
                Ok(ApiResponse::json(200, &json!({"acp_id": id, "readings": readings})))
            }
            ["space", "get_bim_floor_number", floor] => {
                let floor: i32 = floor.parse().map_err(|_| ApiError::BadRequest(format!("bad floor {floor:?}")))?;
                Ok(ApiResponse::svg(render_floor_svg(&store, floor, self.px_per_metre)?))
            }
            ["heatmap", "get", floor, feature] => {
                let floor: i32 = floor.parse().map_err(|_| ApiError::BadRequest(format!("bad floor {floor:?}")))?;
                let feature: Feature = feature.parse().map_err(|_| ApiError::UnknownFeature(feature.to_string()))?;
                let cell = match req.query.get("cell") {
                    Some(c) => c.parse().map_err(|_| ApiError::BadRequest(format!("bad cell size {c:?}")))?,
                    None => DEFAULT_CELL_SIZE,
                };
                let latest = self.latest.snapshot();
                let h = Heatmap::full(&store, floor, feature, cell, latest.values().filter(|e| may_read(e.acp_id())))?;
                Ok(ApiResponse::json(200, &serde_json::to_value(h.grid()).expect("grid serialises")))
            }
            ["stats"] => {
                let mut m = Map::new();
                m.insert("revision".into(), json!(store.revision()));
                for kind in Kind::ALL {
                    m.insert(format!("{}s", kind.name()), json!(store.ids(kind).len()));
                }
                m.insert("sensors_with_readings".into(), json!(self.latest.len()));
                if let Value::Object(extra) = (self.stats)() {
                    m.extend(extra);
                }
                Ok(ApiResponse::json(200, &Value::Object(m)))
            }
            _ => Err(ApiError::NotFound(format!("no endpoint {}", req.path))),
        }
    }
}

fn sensor_json(store: &MetadataStore, id: &str) -> Result<Value, ApiError> {
    let rec = store.get(Kind::Sensor, id, None)?;
    let mut body = store.sensor(id)?.to_body();
    body.insert("acp_ts".into(), json!(rec.acp_ts.to_string()));
    Ok(Value::Object(body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Map;

    fn api() -> Api {
        let latest = LatestReadings::new();
        latest.observe(
            &crate::model::Envelope::builder("elsys-co2-05f5e1", Timestamp::from_secs(1_600_000_000), "co2", Map::new())
                .cooked(Feature::Co2, 500.0)
                .build()
                .unwrap(),
        );
        Api::new(Arc::new(SharedStore::new(demo_site())), latest, None)
    }

    fn keys(v: &Value) -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    }

    #[test]
    fn bim_listing_fields() {
        let r = api().handle(&ApiRequest::get("/bim/get/FE11"));
        assert_eq!(r.status, 200);
        let v = r.body_json().unwrap();
        assert_eq!(
            keys(&v),
            ["acp_boundary", "acp_location", "acp_ts", "crate_id", "crate_type", "description", "long-name", "parent_crate_id"]
        );
        assert_eq!(v["acp_ts"], "1589469825.165538");
        let tree = api().handle(&ApiRequest::get("/bim/get/WGB/2")).body_json().unwrap();
        assert_eq!(tree["children"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn statuses() {
        let a = api();
        assert_eq!(a.handle(&ApiRequest::get("/sensors/get/unknown")).status, 404);
        assert_eq!(a.handle(&ApiRequest::get("/space/get_bim_floor_number/x")).status, 400);
        assert_eq!(a.handle(&ApiRequest::get("/nope")).status, 404);
        assert_eq!(a.handle(&ApiRequest::new("POST", "/stats")).status, 400);
        assert_eq!(a.handle(&ApiRequest::get("/heatmap/get/1/smell")).status, 400);
        assert_eq!(a.handle(&ApiRequest::get("/readings/get/elsys-co2-05f5e1?as=cd456")).status, 403);
        assert_eq!(a.handle(&ApiRequest::get("/readings/get/elsys-co2-05f5e1?as=ab123")).status, 200);
        assert_eq!(a.handle(&ApiRequest::get("/readings/get/elsys-co2-05f5e1?from=1")).status, 400);
        let s = a.handle(&ApiRequest::get("/stats")).body_json().unwrap();
        assert_eq!(s["sensors"], 3);
    }

    #[test]
    fn sensors_by_crate_respect_subject() {
        let a = api();
        let all = a.handle(&ApiRequest::get("/sensors/bim/get/FN05")).body_json().unwrap();
        assert_eq!(all["sensors"].as_array().unwrap().len(), 1);
        let none = a.handle(&ApiRequest::get("/sensors/bim/get/FN05?as=gh012")).body_json().unwrap();
        assert!(none["sensors"].as_array().unwrap().is_empty());
    }

    #[test]
    fn query_decoding() {
        let r = ApiRequest::get("/x?as=a%20b&from=1.5&flag&bad=%zz%e9");
        assert_eq!(r.query["bad"], "%zz\u{fffd}");
        assert_eq!(r.query["as"], "a b");
        assert_eq!(r.query["from"], "1.5");
        assert_eq!(r.query["flag"], "");
    }
}
