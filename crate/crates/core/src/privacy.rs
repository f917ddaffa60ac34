//! Read-permission evaluation over the metadata graph. A person may read a
//! sensor when they occupy the sensor's crate or one of its ancestors, or
//! when a permission naming them (directly or through a role) targets the
//! sensor or any ancestor crate. Everything else is denied.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cep::ComplexEvent;
use crate::metadata::{
    Kind, MetadataStore, Permission, Person, SharedStore, StoreError, Subject, ROLE_DEPARTMENT_MEMBER,
};
use crate::model::{Envelope, Feature, Timestamp};
use crate::rts::{Context, Input, Verticle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error(transparent)]
    NotFound(#[from] StoreError),
    #[error("no sensor under {crate_id} has a {feature} reading")]
    NoData { crate_id: String, feature: String },
    #[error("audit log: {0}")]
    Audit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

/// A decision and the chain that justifies it: `sensor:<id>`, then each
/// `crate:<id>` walked, then the granting `occupies:<person>` or
/// `permission:<id>` when allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub decision: Decision,
    pub proof_path: Vec<String>,
}

fn holds_role(store: &MetadataStore, person: &Person, role: &str, org: Option<&str>) -> bool {
    let has_role = role == ROLE_DEPARTMENT_MEMBER || person.roles.iter().any(|r| r == role);
    if !has_role {
        return false;
    }
    match org {
        // a role without an org scope applies to any affiliated holder
        None => !person.affiliations.is_empty(),
        Some(org) => person.affiliations.iter().any(|a| store.org_chain(a).iter().any(|o| o == org)),
    }
}

fn subject_matches(store: &MetadataStore, person: &Person, subject: &Subject) -> bool {
    match subject {
        Subject::Person { person: p } => *p == person.person_id,
        Subject::Role { role, org } => holds_role(store, person, role, org.as_deref()),
    }
}

/// Walks upward from the sensor only; siblings and descendants are never read.
pub fn check(store: &MetadataStore, person_id: &str, verb: &str, sensor_id: &str) -> Result<CheckResult, PrivacyError> {
    let person = store.person(person_id)?;
    let sensor = store.sensor(sensor_id)?;
    let permissions: Vec<Permission> = store.permissions().into_iter().filter(|p| p.verb == verb).collect();
    let grants_read = verb == crate::metadata::VERB_SENSOR_DATA_READ;

    let mut proof = vec![format!("sensor:{sensor_id}")];
    let grant = |object: &str, is_crate: bool| -> Option<String> {
        if is_crate && grants_read && person.occupies.iter().any(|o| o == object) {
            return Some(format!("occupies:{person_id}"));
        }
        permissions
            .iter()
            .find(|p| p.object == object && subject_matches(store, &person, &p.subject))
            .map(|p| format!("permission:{}", p.permission_id))
    };
    if let Some(g) = grant(sensor_id, false) {
        proof.push(g);
        return Ok(CheckResult { decision: Decision::Allow, proof_path: proof });
    }
    let chain = store.ancestry_from(sensor.parent_crate_id().map(str::to_string)).chain;
    for c in &chain {
        proof.push(format!("crate:{c}"));
        if let Some(g) = grant(c, true) {
            proof.push(g);
            return Ok(CheckResult { decision: Decision::Allow, proof_path: proof });
        }
    }
    Ok(CheckResult { decision: Decision::Deny, proof_path: proof })
}

/// Complex events are visible only when every contributing sensor is.
pub fn check_complex(store: &MetadataStore, person_id: &str, verb: &str, event: &ComplexEvent) -> Decision {
    let all = event
        .sensor_ids
        .iter()
        .all(|s| check(store, person_id, verb, s).is_ok_and(|r| r.decision.is_allow()));
    if all {
        Decision::Allow
    } else {
        Decision::Deny
    }
}

/// Per-person envelope filter with a decision cache. The cache is dropped
/// whenever the store revision changes.
#[derive(Debug, Clone)]
pub struct PrivacyFilter {
    person_id: String,
    verb: String,
    revision: Option<u64>,
    cache: HashMap<String, Decision>,
    hits: u64,
}

impl PrivacyFilter {
    pub fn new(person_id: &str, verb: &str) -> Self {
        Self { person_id: person_id.to_string(), verb: verb.to_string(), revision: None, cache: HashMap::new(), hits: 0 }
    }

    pub fn person_id(&self) -> &str {
        &self.person_id
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits
    }

    /// Unknown people or sensors are denied.
    pub fn decide(&mut self, store: &MetadataStore, sensor_id: &str) -> Decision {
        if self.revision != Some(store.revision()) {
            self.cache.clear();
            self.revision = Some(store.revision());
        }
        if let Some(d) = self.cache.get(sensor_id) {
            self.hits += 1;
            return *d;
        }
        let d = check(store, &self.person_id, &self.verb, sensor_id).map_or(Decision::Deny, |r| r.decision);
        self.cache.insert(sensor_id.to_string(), d);
        d
    }

    pub fn allows(&mut self, store: &MetadataStore, env: &Envelope) -> bool {
        self.decide(store, env.acp_id()).is_allow()
    }
}

pub fn filter_stream<'a>(
    store: &'a MetadataStore,
    person_id: &str,
    verb: &str,
    envelopes: impl IntoIterator<Item = Envelope> + 'a,
) -> impl Iterator<Item = Envelope> + 'a {
    let mut f = PrivacyFilter::new(person_id, verb);
    envelopes.into_iter().filter(move |e| f.allows(store, e))
}

/// Outbound verticle: republishes envelopes the person may read on
/// `private.<person_id>`.
pub struct PrivacyVerticle {
    store: Arc<SharedStore>,
    filter: PrivacyFilter,
    address: String,
}

impl PrivacyVerticle {
    pub fn new(store: Arc<SharedStore>, person_id: &str, verb: &str) -> Self {
        Self { store, filter: PrivacyFilter::new(person_id, verb), address: format!("private.{person_id}") }
    }

    pub fn address(&self) -> &str {
        &self.address
    }
}

impl Verticle for PrivacyVerticle {
    fn handle(&mut self, input: Input<'_>, ctx: &mut Context<'_>) {
        let Input::Bus(ev) = input else { return };
        let Some(env) = ev.body.envelope() else { return };
        let snapshot = self.store.snapshot();
        if self.filter.allows(&snapshot, env) {
            ctx.publish(&self.address, ev.body.clone());
        }
    }
}

/// A display value that reveals nothing about which sensors produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateView {
    pub crate_id: String,
    pub feature: String,
    pub value: f64,
    pub sensor_count: usize,
}

/// Mean of the latest `feature` value of every sensor in `crate_id` or its
/// descendants. `latest` maps a sensor id to its most recent envelope.
pub fn aggregate_view<'a>(
    store: &MetadataStore,
    crate_id: &str,
    feature: Feature,
    latest: impl Fn(&str) -> Option<&'a Envelope>,
) -> Result<AggregateView, PrivacyError> {
    let values: Vec<f64> = store
        .sensors_in_crate(crate_id, true)?
        .iter()
        .filter_map(|s| latest(&s.acp_id)?.cooked(feature))
        .collect();
    if values.is_empty() {
        return Err(PrivacyError::NoData { crate_id: crate_id.to_string(), feature: feature.name().to_string() });
    }
    Ok(AggregateView {
        crate_id: crate_id.to_string(),
        feature: feature.name().to_string(),
        value: values.iter().sum::<f64>() / values.len() as f64,
        sensor_count: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub person: String,
    pub sensor: String,
    pub decision: Decision,
    pub proof_path: Vec<String>,
    pub ts: Timestamp,
}

impl AuditRecord {
    pub fn new(person: &str, sensor: &str, result: &CheckResult, ts: Timestamp) -> Self {
        Self {
            person: person.to_string(),
            sensor: sensor.to_string(),
            decision: result.decision,
            proof_path: result.proof_path.clone(),
            ts,
        }
    }

    pub fn write_line(&self, mut w: impl Write) -> Result<(), PrivacyError> {
        let line = serde_json::to_string(self).map_err(|e| PrivacyError::Audit(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| PrivacyError::Audit(e.to_string()))
    }
}

/// Loads permission bodies from NDJSON (one object per line) into the store.
pub fn load_permissions(store: &mut MetadataStore, ndjson: &str, at: &Timestamp) -> Result<usize, PrivacyError> {
    let mut n = 0;
    for line in ndjson.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let body: serde_json::Value =
            serde_json::from_str(line).map_err(|e| StoreError::InvalidBody(format!("permission line: {e}")))?;
        let perm = Permission::from_body(body.as_object().ok_or_else(|| {
            StoreError::InvalidBody("permission line is not an object".into())
        })?)?;
        store.upsert(Kind::Permission, &perm.permission_id, body, at.clone())?;
        n += 1;
    }
    Ok(n)
}
