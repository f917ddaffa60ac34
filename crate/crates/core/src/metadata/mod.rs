//! Versioned metadata: crates, sensors, people, organisations and
//! permissions, each kept as a chain of timestamped records.

mod fixtures;
mod types;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::Timestamp;

pub use fixtures::demo_site;
pub use types::{
    Crate, CrateType, Kind, Org, Permission, Person, SensorMeta, Subject, ROLE_BUILDING_MANAGER,
    ROLE_DEPARTMENT_MEMBER, VERB_SENSOR_DATA_READ,
};

const TOMBSTONE_KEY: &str = "deleted";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("{kind} {id}: write at {at} does not follow live record at {live}")]
    TimestampRegression { kind: Kind, id: String, at: Timestamp, live: Timestamp },
    #[error("{kind} {id}: parent chain would contain itself")]
    CyclicParent { kind: Kind, id: String },
    #[error("{field} references missing crate {id:?}")]
    DanglingReference { field: &'static str, id: String },
    #[error("{kind} {id} not found")]
    NotFound { kind: Kind, id: String },
    #[error("{kind} {id} has no record at {at}")]
    NoRecordAt { kind: Kind, id: String, at: Timestamp },
    #[error("invalid body: {0}")]
    InvalidBody(String),
    #[error("journal: {0}")]
    Journal(String),
}

/// One version of an object. Live while `acp_ts_end` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionedRecord {
    pub kind: Kind,
    pub id: String,
    pub acp_ts: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acp_ts_end: Option<Timestamp>,
    pub body: Map<String, Value>,
}

impl VersionedRecord {
    pub fn is_live(&self) -> bool {
        self.acp_ts_end.is_none()
    }

    pub fn is_tombstone(&self) -> bool {
        self.body.get(TOMBSTONE_KEY) == Some(&Value::Bool(true))
    }

    pub fn contains(&self, at: &Timestamp) -> bool {
        &self.acp_ts <= at && self.acp_ts_end.as_ref().is_none_or(|end| at < end)
    }
}

/// Ancestors nearest first. `dangling` names a parent id that could not be
/// resolved, in which case `chain` stops short of the root.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ancestry {
    pub chain: Vec<String>,
    pub dangling: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrateNode {
    pub record: Crate,
    pub acp_ts: Timestamp,
    pub children: Vec<CrateNode>,
}

impl CrateNode {
    pub fn count(&self) -> usize {
        1 + self.children.iter().map(CrateNode::count).sum::<usize>()
    }
}

#[derive(Debug, Default)]
struct ReadCounter(AtomicU64);

impl Clone for ReadCounter {
    fn clone(&self) -> Self {
        ReadCounter(AtomicU64::new(self.0.load(Ordering::Relaxed)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MetadataStore {
    objects: BTreeMap<Kind, BTreeMap<String, Vec<VersionedRecord>>>,
    /// Live crate parent -> child crate ids.
    children: BTreeMap<String, BTreeSet<String>>,
    /// Live crate -> sensors whose location names it as parent.
    sensors_by_crate: BTreeMap<String, BTreeSet<String>>,
    revision: u64,
    reads: ReadCounter,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Incremented on every accepted write.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Number of live-object lookups served so far (crate, sensor, person, org).
    pub fn reads(&self) -> u64 {
        self.reads.0.load(Ordering::Relaxed)
    }

    pub fn upsert(
        &mut self,
        kind: Kind,
        id: &str,
        body: Value,
        at: Timestamp,
    ) -> Result<&VersionedRecord, StoreError> {
        let Value::Object(mut body) = body else {
            return Err(StoreError::InvalidBody("body must be a JSON object".into()));
        };
        let tombstone = body.get(TOMBSTONE_KEY) == Some(&Value::Bool(true));
        if !tombstone {
            match body.get(kind.id_key()) {
                None => {
                    body.insert(kind.id_key().into(), Value::String(id.to_string()));
                }
                Some(Value::String(s)) if s == id => {}
                Some(other) => {
                    return Err(StoreError::InvalidBody(format!(
                        "{} is {other} but record id is {id:?}",
                        kind.id_key()
                    )))
                }
            }
        }
        if let Some(live) = self.live_record(kind, id) {
            if at <= live.acp_ts {
                return Err(StoreError::TimestampRegression {
                    kind,
                    id: id.to_string(),
                    at,
                    live: live.acp_ts.clone(),
                });
            }
        }
        if !tombstone {
            self.validate(kind, id, &body)?;
        }

        self.unindex(kind, id);
        let chain = self.objects.entry(kind).or_default().entry(id.to_string()).or_default();
        if let Some(prev) = chain.last_mut() {
            prev.acp_ts_end = Some(at.clone());
        }
        chain.push(VersionedRecord { kind, id: id.to_string(), acp_ts: at, acp_ts_end: None, body });
        self.index(kind, id);
        self.revision += 1;
        Ok(self.objects[&kind][id].last().unwrap())
    }

    fn validate(&self, kind: Kind, id: &str, body: &Map<String, Value>) -> Result<(), StoreError> {
        match kind {
            Kind::Crate => {
                let c = Crate::from_body(body)?;
                if let Some(parent) = &c.parent_crate_id {
                    self.check_acyclic(kind, id, parent, |s, cur| {
                        s.peek_crate(cur).and_then(|c| c.parent_crate_id)
                    })?;
                }
            }
            Kind::Sensor => {
                let s = SensorMeta::from_body(body)?;
                if let Some(loc) = &s.acp_location {
                    loc.validate().map_err(|e| StoreError::InvalidBody(e.to_string()))?;
                }
            }
            Kind::Person => {
                let p = Person::from_body(body)?;
                for c in &p.occupies {
                    if self.peek_crate(c).is_none() {
                        return Err(StoreError::DanglingReference { field: "occupies", id: c.clone() });
                    }
                }
            }
            Kind::Org => {
                let o = Org::from_body(body)?;
                if let Some(parent) = &o.parent_org_id {
                    self.check_acyclic(kind, id, parent, |s, cur| {
                        s.peek_org(cur).and_then(|o| o.parent_org_id)
                    })?;
                }
            }
            Kind::Permission => {
                Permission::from_body(body)?;
            }
        }
        Ok(())
    }

    fn check_acyclic(
        &self,
        kind: Kind,
        id: &str,
        first_parent: &str,
        parent_of: impl Fn(&Self, &str) -> Option<String>,
    ) -> Result<(), StoreError> {
        let mut seen = HashSet::new();
        let mut cur = Some(first_parent.to_string());
        while let Some(c) = cur {
            if c == id {
                return Err(StoreError::CyclicParent { kind, id: id.to_string() });
            }
            if !seen.insert(c.clone()) {
                break;
            }
            cur = parent_of(self, &c);
        }
        Ok(())
    }

    fn unindex(&mut self, kind: Kind, id: &str) {
        match kind {
            Kind::Crate => {
                if let Some(p) = self.peek_crate(id).and_then(|c| c.parent_crate_id) {
                    remove_from(&mut self.children, &p, id);
                }
            }
            Kind::Sensor => {
                if let Some(p) = self.peek_sensor(id).and_then(|s| s.parent_crate_id().map(str::to_string)) {
                    remove_from(&mut self.sensors_by_crate, &p, id);
                }
            }
            _ => {}
        }
    }

    fn index(&mut self, kind: Kind, id: &str) {
        match kind {
            Kind::Crate => {
                if let Some(p) = self.peek_crate(id).and_then(|c| c.parent_crate_id) {
                    self.children.entry(p).or_default().insert(id.to_string());
                }
            }
            Kind::Sensor => {
                if let Some(p) = self.peek_sensor(id).and_then(|s| s.parent_crate_id().map(str::to_string)) {
                    self.sensors_by_crate.entry(p).or_default().insert(id.to_string());
                }
            }
            _ => {}
        }
    }

    pub fn delete(&mut self, kind: Kind, id: &str, at: Timestamp) -> Result<&VersionedRecord, StoreError> {
        if self.live_body(kind, id).is_none() {
            return Err(StoreError::NotFound { kind, id: id.to_string() });
        }
        self.upsert(kind, id, serde_json::json!({ TOMBSTONE_KEY: true }), at)
    }

    /// The live record, or the one whose validity interval contains `at`.
    pub fn get(&self, kind: Kind, id: &str, at: Option<&Timestamp>) -> Result<&VersionedRecord, StoreError> {
        let chain = self.history(kind, id)?;
        match at {
            None => Ok(chain.last().expect("chains are never empty")),
            Some(at) => {
                let idx = chain.partition_point(|r| &r.acp_ts <= at);
                if idx == 0 {
                    return Err(StoreError::NoRecordAt { kind, id: id.to_string(), at: at.clone() });
                }
                Ok(&chain[idx - 1])
            }
        }
    }

    pub fn history(&self, kind: Kind, id: &str) -> Result<&[VersionedRecord], StoreError> {
        self.objects
            .get(&kind)
            .and_then(|m| m.get(id))
            .map(Vec::as_slice)
            .ok_or_else(|| StoreError::NotFound { kind, id: id.to_string() })
    }

    /// Ids with a live, non-deleted record.
    pub fn ids(&self, kind: Kind) -> Vec<String> {
        self.objects
            .get(&kind)
            .into_iter()
            .flat_map(|m| m.iter())
            .filter(|(_, chain)| !chain.last().unwrap().is_tombstone())
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &VersionedRecord> {
        self.objects.values().flat_map(|m| m.values()).flatten()
    }

    fn live_record(&self, kind: Kind, id: &str) -> Option<&VersionedRecord> {
        self.objects.get(&kind)?.get(id)?.last()
    }

    fn live_body(&self, kind: Kind, id: &str) -> Option<&Map<String, Value>> {
        self.live_record(kind, id).filter(|r| !r.is_tombstone()).map(|r| &r.body)
    }

    // Uncounted lookups for internal bookkeeping.
    fn peek_crate(&self, id: &str) -> Option<Crate> {
        Crate::from_body(self.live_body(Kind::Crate, id)?).ok()
    }

    fn peek_sensor(&self, id: &str) -> Option<SensorMeta> {
        SensorMeta::from_body(self.live_body(Kind::Sensor, id)?).ok()
    }

    fn peek_org(&self, id: &str) -> Option<Org> {
        Org::from_body(self.live_body(Kind::Org, id)?).ok()
    }

    fn count_read(&self) {
        self.reads.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn crate_(&self, id: &str) -> Result<Crate, StoreError> {
        self.count_read();
        self.peek_crate(id).ok_or_else(|| StoreError::NotFound { kind: Kind::Crate, id: id.to_string() })
    }

    pub fn sensor(&self, id: &str) -> Result<SensorMeta, StoreError> {
        self.count_read();
        self.peek_sensor(id).ok_or_else(|| StoreError::NotFound { kind: Kind::Sensor, id: id.to_string() })
    }

    pub fn person(&self, id: &str) -> Result<Person, StoreError> {
        self.count_read();
        self.live_body(Kind::Person, id)
            .and_then(|b| Person::from_body(b).ok())
            .ok_or_else(|| StoreError::NotFound { kind: Kind::Person, id: id.to_string() })
    }

    pub fn org(&self, id: &str) -> Result<Org, StoreError> {
        self.count_read();
        self.peek_org(id).ok_or_else(|| StoreError::NotFound { kind: Kind::Org, id: id.to_string() })
    }

    pub fn permissions(&self) -> Vec<Permission> {
        self.ids(Kind::Permission)
            .iter()
            .filter_map(|id| Permission::from_body(self.live_body(Kind::Permission, id)?).ok())
            .collect()
    }

    /// `crate_id` and its descendants, `depth` levels deep (`None` = unlimited).
    pub fn crate_tree(&self, crate_id: &str, depth: Option<usize>) -> Result<CrateNode, StoreError> {
        let record = self.crate_(crate_id)?;
        let acp_ts = self.live_record(Kind::Crate, crate_id).unwrap().acp_ts.clone();
        let mut node = CrateNode { record, acp_ts, children: Vec::new() };
        if depth != Some(0) {
            let mut visited = HashSet::from([crate_id.to_string()]);
            self.fill_children(&mut node, depth.map(|d| d - 1), &mut visited);
        }
        Ok(node)
    }

    fn fill_children(&self, node: &mut CrateNode, depth: Option<usize>, visited: &mut HashSet<String>) {
        let Some(kids) = self.children.get(&node.record.crate_id) else { return };
        for kid in kids {
            if !visited.insert(kid.clone()) {
                continue;
            }
            let Ok(record) = self.crate_(kid) else { continue };
            let acp_ts = self.live_record(Kind::Crate, kid).unwrap().acp_ts.clone();
            let mut child = CrateNode { record, acp_ts, children: Vec::new() };
            if depth != Some(0) {
                self.fill_children(&mut child, depth.map(|d| d - 1), visited);
            }
            node.children.push(child);
        }
    }

    /// Crate ids above `id`, nearest first. For a crate the list excludes the
    /// crate itself; for a sensor it starts at the sensor's parent crate.
    pub fn ancestors(&self, id: &str) -> Result<Ancestry, StoreError> {
        let first = if let Ok(c) = self.crate_(id) {
            c.parent_crate_id
        } else if let Ok(s) = self.sensor(id) {
            s.parent_crate_id().map(str::to_string)
        } else {
            return Err(StoreError::NotFound { kind: Kind::Crate, id: id.to_string() });
        };
        Ok(self.ancestry_from(first))
    }

    /// Walks parents starting at (and including) `first`.
    pub fn ancestry_from(&self, first: Option<String>) -> Ancestry {
        let mut out = Ancestry::default();
        let mut cur = first;
        while let Some(c) = cur {
            if out.chain.contains(&c) {
                break;
            }
            match self.crate_(&c) {
                Ok(record) => {
                    out.chain.push(c);
                    cur = record.parent_crate_id;
                }
                Err(_) => {
                    out.dangling = Some(c);
                    break;
                }
            }
        }
        out
    }

    pub fn is_descendant(&self, id: &str, ancestor_id: &str) -> Result<bool, StoreError> {
        self.crate_(ancestor_id)?;
        if id == ancestor_id {
            return Ok(true);
        }
        Ok(self.ancestors(id)?.chain.iter().any(|c| c == ancestor_id))
    }

    /// Sensors parented to `crate_id` (and its descendants when `recursive`), sorted by acp_id.
    pub fn sensors_in_crate(&self, crate_id: &str, recursive: bool) -> Result<Vec<SensorMeta>, StoreError> {
        self.crate_(crate_id)?;
        let mut crates = vec![crate_id.to_string()];
        if recursive {
            let mut seen: HashSet<String> = crates.iter().cloned().collect();
            let mut i = 0;
            while i < crates.len() {
                if let Some(kids) = self.children.get(&crates[i]) {
                    for k in kids {
                        if self.live_body(Kind::Crate, k).is_some() && seen.insert(k.clone()) {
                            crates.push(k.clone());
                        }
                    }
                }
                i += 1;
            }
        }
        let ids: BTreeSet<&String> =
            crates.iter().filter_map(|c| self.sensors_by_crate.get(c)).flatten().collect();
        Ok(ids.into_iter().filter_map(|id| self.peek_sensor(id)).collect())
    }

    /// Organisation ids from `org_id` up to its root, starting with itself.
    pub fn org_chain(&self, org_id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = Some(org_id.to_string());
        while let Some(o) = cur {
            if out.contains(&o) {
                break;
            }
            cur = self.org(&o).ok().and_then(|r| r.parent_org_id);
            out.push(o);
        }
        out
    }

    /// Writes every record in timestamp order, so replaying the output
    /// reproduces this store.
    pub fn export_journal(&self, mut w: impl Write) -> Result<(), StoreError> {
        let mut all: Vec<&VersionedRecord> = self.records().collect();
        all.sort_by(|a, b| (&a.acp_ts, a.kind, &a.id).cmp(&(&b.acp_ts, b.kind, &b.id)));
        for r in all {
            let line = serde_json::to_string(r).map_err(|e| StoreError::Journal(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| StoreError::Journal(e.to_string()))?;
        }
        Ok(())
    }

    /// Rebuilds a store by re-applying journal lines in order. Expiry fields
    /// in the input are ignored; they follow from the chain.
    pub fn replay(r: impl BufRead) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| StoreError::Journal(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VersionedRecord = serde_json::from_str(&line)
                .map_err(|e| StoreError::Journal(format!("line {}: {e}", n + 1)))?;
            store.upsert(rec.kind, &rec.id, Value::Object(rec.body), rec.acp_ts)?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let f = File::open(path).map_err(|e| StoreError::Journal(format!("{}: {e}", path.display())))?;
        Self::replay(BufReader::new(f))
    }
}

fn remove_from(index: &mut BTreeMap<String, BTreeSet<String>>, key: &str, id: &str) {
    if let Some(set) = index.get_mut(key) {
        set.remove(id);
        if set.is_empty() {
            index.remove(key);
        }
    }
}

/// Owns all writes; readers take cheap immutable snapshots that stay
/// consistent while later writes proceed.
#[derive(Debug, Default)]
pub struct SharedStore {
    current: RwLock<Arc<MetadataStore>>,
    journal: Mutex<Option<File>>,
}

impl SharedStore {
    pub fn new(store: MetadataStore) -> Self {
        Self { current: RwLock::new(Arc::new(store)), journal: Mutex::new(None) }
    }

    /// Appends each accepted write to `path` as one NDJSON line.
    pub fn with_journal(self, path: &Path) -> Result<Self, StoreError> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StoreError::Journal(format!("{}: {e}", path.display())))?;
        *self.journal.lock().unwrap() = Some(f);
        Ok(self)
    }

    pub fn snapshot(&self) -> Arc<MetadataStore> {
        self.current.read().unwrap().clone()
    }

    pub fn upsert(&self, kind: Kind, id: &str, body: Value, at: Timestamp) -> Result<VersionedRecord, StoreError> {
        let mut guard = self.current.write().unwrap();
        let store = Arc::make_mut(&mut guard);
        let rec = store.upsert(kind, id, body, at)?.clone();
        if let Some(f) = self.journal.lock().unwrap().as_mut() {
            let line = serde_json::to_string(&rec).map_err(|e| StoreError::Journal(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| StoreError::Journal(e.to_string()))?;
        }
        Ok(rec)
    }
}
