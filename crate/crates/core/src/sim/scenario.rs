use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::coffee::{coffee_step, CoffeeConfig, CoffeeInputs, CoffeeState};
use super::filter::{FilterPolicy, SmartFilter};
use super::SimError;
use crate::broker::Broker;
use crate::decode::DecoderManager;
use crate::model::{Clock, Feature, SystemClock, Timestamp, VirtualClock};
use crate::rts::{
    ClientStream, Delivery, FeedHandler, MessageFiler, MonitorFilter, RtMonitor, Rts, RtsMode, VerticleClass,
    VerticleSpec, DEFAULT_SUBSCRIPTION_CAP, FEED_ADDRESS,
};

/// Default scenario start: 2020-09-13T12:26:40Z.
pub const DEFAULT_START_SECS: u64 = 1_600_000_000;
pub const GATEWAY_STAGE: &str = "gateway";

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueModel {
    Constant { value: f64 },
    Normal { mean: f64, stddev: f64 },
}

impl Default for ValueModel {
    fn default() -> Self {
        ValueModel::Constant { value: 0.0 }
    }
}

impl ValueModel {
    fn level(&self) -> f64 {
        match self {
            ValueModel::Constant { value } => *value,
            ValueModel::Normal { mean, .. } => *mean,
        }
    }

    fn stddev(&self) -> f64 {
        match self {
            ValueModel::Constant { .. } => 0.0,
            ValueModel::Normal { stddev, .. } => *stddev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Emission {
    /// A reading every `interval_secs`, at a seeded random phase.
    Periodic { interval_secs: f64 },
    /// Sampled every `sample_secs`; only what the local filter passes is sent.
    Smart { sample_secs: f64, policy: FilterPolicy },
    /// The coffee-pot node. Readings go out every `report_secs` (default:
    /// every sample); detected pot events go out immediately.
    Coffee {
        sample_secs: f64,
        #[serde(default)]
        report_secs: Option<f64>,
        #[serde(default)]
        weight_noise_kg: f64,
        #[serde(default)]
        config: CoffeeConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    /// More than one expands to `<id>-0001`, `<id>-0002`, ...
    #[serde(default = "one")]
    pub count: usize,
    #[serde(rename = "type")]
    pub acp_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Feature>,
    pub emission: Emission,
    #[serde(default)]
    pub value: ValueModel,
}

fn default_grind_secs() -> f64 {
    30.0
}
fn default_grinder_w() -> f64 {
    150.0
}
fn default_brewer_w() -> f64 {
    900.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    /// New level for a periodic or smart sensor.
    Set { value: f64 },
    Grind {
        #[serde(default = "default_grind_secs")]
        secs: f64,
        #[serde(default = "default_grinder_w")]
        watts: f64,
    },
    /// Brewer on for `secs`; the pot gains `kg` of coffee linearly meanwhile.
    Brew {
        secs: f64,
        kg: f64,
        #[serde(default = "default_brewer_w")]
        watts: f64,
    },
    /// Cups of 0.25 kg, poured in place or with the pot lifted away for `lift_secs`.
    Pour {
        #[serde(default = "one")]
        cups: usize,
        #[serde(default)]
        lift_secs: Option<f64>,
    },
    Remove,
    Replace {
        #[serde(default)]
        coffee_kg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Seconds after scenario start.
    pub at: f64,
    pub sensor: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatencyModel {
    Zero,
    Constant { ms: f64 },
    Normal { mean_ms: f64, stddev_ms: f64 },
}

impl LatencyModel {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            LatencyModel::Zero => 0.0,
            LatencyModel::Constant { ms } => *ms,
            LatencyModel::Normal { mean_ms, stddev_ms } => {
                Normal::new(*mean_ms, *stddev_ms).map(|n| n.sample(rng)).unwrap_or(*mean_ms).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// Seconds of simulated (or wall) time.
    pub duration: f64,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Timestamp>,
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    /// Per-hop latency models; only the `gateway` hop is injected.
    #[serde(default)]
    pub latency_models: BTreeMap<String, LatencyModel>,
}

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::Config { path: path.into(), message: message.into() }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| cfg_err(format!("line {}", e.line()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| cfg_err(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text).map_err(|e| match e {
            SimError::Config { path: p, message } => cfg_err(format!("{}: {p}", path.display()), message),
            other => other,
        })
    }

    pub fn start(&self) -> Timestamp {
        self.start.clone().unwrap_or_else(|| Timestamp::from_secs(DEFAULT_START_SECS))
    }

    /// Expanded sensor ids with their spec, in config order.
    pub fn sensor_ids(&self) -> Vec<(String, &SensorSpec)> {
        let mut out = Vec::new();
        for s in &self.sensors {
            if s.count == 1 {
                out.push((s.id.clone(), s));
            } else {
                out.extend((1..=s.count).map(|i| (format!("{}-{i:04}", s.id), s)));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(cfg_err("duration", "must be positive"));
        }
        let positive = |v: f64, path: String| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(cfg_err(path, format!("must be positive, got {v}")))
            }
        };
        for (i, s) in self.sensors.iter().enumerate() {
            let p = format!("sensors[{i}]");
            if s.id.is_empty() || s.id.contains(['/', '+', '#']) {
                return Err(cfg_err(format!("{p}.id"), format!("invalid sensor id {:?}", s.id)));
            }
            if s.count == 0 {
                return Err(cfg_err(format!("{p}.count"), "must be at least 1"));
            }
            match &s.emission {
                Emission::Periodic { interval_secs } => positive(*interval_secs, format!("{p}.emission.interval_secs"))?,
                Emission::Smart { sample_secs, .. } => positive(*sample_secs, format!("{p}.emission.sample_secs"))?,
                Emission::Coffee { sample_secs, report_secs, .. } => {
                    positive(*sample_secs, format!("{p}.emission.sample_secs"))?;
                    if let Some(r) = report_secs {
                        positive(*r, format!("{p}.emission.report_secs"))?;
                    }
                }
            }
            if !matches!(s.emission, Emission::Coffee { .. }) && s.feature.is_none() {
                return Err(cfg_err(format!("{p}.feature"), "required for periodic and smart sensors"));
            }
        }
        let ids: HashMap<String, &SensorSpec> = self.sensor_ids().into_iter().collect();
        for (i, e) in self.script.iter().enumerate() {
            let p = format!("script[{i}]");
            if !(e.at >= 0.0) {
                return Err(cfg_err(format!("{p}.at"), "must be non-negative"));
            }
            let Some(spec) = ids.get(&e.sensor) else {
                return Err(cfg_err(format!("{p}.sensor"), format!("unknown sensor {:?}", e.sensor)));
            };
            let coffee = matches!(spec.emission, Emission::Coffee { .. });
            if coffee == matches!(e.action, Action::Set { .. }) {
                return Err(cfg_err(format!("{p}.action"), "set applies to plain sensors, pot actions to coffee nodes"));
            }
        }
        for (k, m) in &self.latency_models {
            if k != GATEWAY_STAGE {
                return Err(cfg_err(format!("latency_models.{k}"), "only the gateway hop is injected"));
            }
            if let LatencyModel::Normal { stddev_ms, .. } = m {
                if !(*stddev_ms >= 0.0) {
                    return Err(cfg_err(format!("latency_models.{k}.stddev_ms"), "must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

/// Stamps for one delivered message, in pipeline order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub acp_id: String,
    pub t_emit: Timestamp,
    pub t_gateway: Timestamp,
    pub t_broker: Timestamp,
    pub t_bus: Timestamp,
    pub t_client: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acp_event: Option<String>,
}

impl TraceRecord {
    pub fn stamps(&self) -> [&Timestamp; 5] {
        [&self.t_emit, &self.t_gateway, &self.t_broker, &self.t_bus, &self.t_client]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub t: Timestamp,
    pub sensor: String,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTrace {
    pub records: Vec<TraceRecord>,
    pub ground_truth: Vec<GroundTruth>,
    /// Messages handed to the gateway.
    pub emitted: u64,
    pub deadlettered: u64,
}

impl ScenarioTrace {
    /// Every message emitted was either delivered or dead-lettered.
    pub fn conserved(&self) -> bool {
        self.emitted == self.records.len() as u64 + self.deadlettered
    }

    /// Delivered pot events in delivery order as (time, sensor, event).
    pub fn detected_events(&self) -> Vec<GroundTruth> {
        self.records
            .iter()
            .filter_map(|r| {
                Some(GroundTruth { t: r.t_emit.clone(), sensor: r.acp_id.clone(), event: r.acp_event.clone()? })
            })
            .collect()
    }

    pub fn trace_ndjson(&self) -> String {
        ndjson(&self.records)
    }

    pub fn ground_truth_ndjson(&self) -> String {
        ndjson(&self.ground_truth)
    }

    /// Writes `trace.ndjson` and `ground_truth.ndjson` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("trace.ndjson"), self.trace_ndjson()).map_err(io)?;
        fs::write(dir.join("ground_truth.ndjson"), self.ground_truth_ndjson()).map_err(io)?;
        Ok(())
    }

    pub fn read_records(path: &Path) -> Result<Vec<TraceRecord>, SimError> {
        let text = fs::read_to_string(path).map_err(io)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| cfg_err(format!("{}:{}", path.display(), i + 1), e.to_string()))
            })
            .collect()
    }
}

fn io(e: std::io::Error) -> SimError {
    SimError::Io(e.to_string())
}

fn ndjson<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("trace records serialise"));
        out.push('\n');
    }
    out
}

/// A message as it leaves the sensor, before the network.
#[derive(Debug, Clone)]
struct Outgoing {
    offset_us: u64,
    sensor_idx: usize,
    topic: String,
    fields: Map<String, Value>,
}

fn secs_to_us(s: f64) -> u64 {
    (s * 1e6).round().max(0.0) as u64
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn sensor_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Level of a plain sensor at `t` given its `set` actions (sorted by time).
fn level_at(initial: f64, sets: &[(f64, f64)], t: f64) -> f64 {
    sets.iter().take_while(|(at, _)| *at <= t).last().map_or(initial, |(_, v)| *v)
}

/// Continuous pot model driven by the script: the signal the node's
/// sensors see, plus the labels a human observer would write down.
struct PotModel<'a> {
    actions: Vec<&'a ScriptEntry>,
    next: usize,
    pot_mass: f64,
    present: bool,
    coffee: f64,
    ramp: Option<(f64, f64, f64, f64)>,
    lifted_until: Option<(f64, f64)>,
    grind_until: f64,
    grind_w: f64,
    brew_until: f64,
    brew_w: f64,
    has_coffee: bool,
    armed: bool,
    new_pot_threshold: f64,
    empty_threshold: f64,
}

impl<'a> PotModel<'a> {
    fn new(mut actions: Vec<&'a ScriptEntry>, cfg: &CoffeeConfig) -> Self {
        actions.sort_by(|a, b| a.at.total_cmp(&b.at));
        Self {
            actions,
            next: 0,
            pot_mass: cfg.pot_mass_kg,
            present: true,
            coffee: 0.0,
            ramp: None,
            lifted_until: None,
            grind_until: -1.0,
            grind_w: 0.0,
            brew_until: -1.0,
            brew_w: 0.0,
            has_coffee: false,
            armed: false,
            new_pot_threshold: cfg.new_pot_above_kg,
            empty_threshold: cfg.empty_at_most_kg,
        }
    }

    fn after_drop(&mut self, t: f64, labels: &mut Vec<(f64, &'static str)>) {
        if self.has_coffee {
            labels.push((t, "pot-poured"));
            if self.pot_mass + self.coffee <= self.empty_threshold {
                labels.push((t, "pot-empty"));
                self.has_coffee = false;
            }
        }
    }

    /// Applies script actions up to `t` and returns the sensor inputs there.
    fn advance(&mut self, t: f64, labels: &mut Vec<(f64, &'static str)>) -> CoffeeInputs {
        if let Some((until, _)) = self.lifted_until {
            if until <= t {
                self.lifted_until = None;
                self.present = true;
                self.after_drop(until, labels);
            }
        }
        while self.next < self.actions.len() && self.actions[self.next].at <= t {
            let e = self.actions[self.next];
            self.next += 1;
            match e.action {
                Action::Set { .. } => {}
                Action::Grind { secs, watts } => {
                    self.grind_until = e.at + secs;
                    self.grind_w = watts;
                    labels.push((e.at, "coffee-grinding"));
                    self.armed = true;
                }
                Action::Brew { secs, kg, watts } => {
                    self.brew_until = e.at + secs;
                    self.brew_w = watts;
                    self.armed = true;
                    let (from, to) = (self.coffee, self.coffee + kg);
                    self.ramp = Some((e.at, e.at + secs.max(1e-9), from, to));
                    let (w0, w1) = (self.pot_mass + from, self.pot_mass + to);
                    if self.present && w1 > self.new_pot_threshold {
                        let frac = ((self.new_pot_threshold - w0) / (w1 - w0)).clamp(0.0, 1.0);
                        labels.push((e.at + frac * secs, "new-pot"));
                        self.has_coffee = true;
                        self.armed = false;
                    }
                }
                Action::Pour { cups, lift_secs } => {
                    self.coffee = (self.coffee - 0.25 * cups as f64).max(0.0);
                    match lift_secs {
                        Some(l) if self.present => {
                            labels.push((e.at, "pot-removed"));
                            self.present = false;
                            self.lifted_until = Some((e.at + l, self.coffee));
                        }
                        _ => self.after_drop(e.at, labels),
                    }
                }
                Action::Remove => {
                    if self.present {
                        labels.push((e.at, "pot-removed"));
                    }
                    self.present = false;
                }
                Action::Replace { coffee_kg } => {
                    let before = self.coffee;
                    self.present = true;
                    self.coffee = coffee_kg;
                    if self.armed && self.pot_mass + coffee_kg > self.new_pot_threshold {
                        labels.push((e.at, "new-pot"));
                        self.has_coffee = true;
                        self.armed = false;
                    } else if coffee_kg <= before - 0.15 {
                        self.after_drop(e.at, labels);
                    }
                }
            }
        }
        if let Some((t0, t1, from, to)) = self.ramp {
            self.coffee = if t >= t1 { to } else { from + (to - from) * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) };
            if t >= t1 {
                self.ramp = None;
            }
        }
        CoffeeInputs {
            weight: if self.present { self.pot_mass + self.coffee } else { 0.0 },
            grinder_w: if t < self.grind_until { self.grind_w } else { 0.0 },
            brewer_w: if t < self.brew_until { self.brew_w } else { 0.0 },
        }
    }
}

/// Everything the sensors send, in emission order, plus ground truth.
struct Generated {
    messages: Vec<Outgoing>,
    truth: Vec<(u64, String, String)>,
}

fn generate(cfg: &ScenarioConfig, seed: u64) -> Generated {
    let start = cfg.start();
    let start_us = (start.as_nanos() / 1000) as u64;
    let ts = |off: u64| Timestamp::from_micros(start_us + off).to_string();
    let duration_us = secs_to_us(cfg.duration);
    let mut messages = Vec::new();
    let mut truth = Vec::new();

    for (idx, (id, spec)) in cfg.sensor_ids().into_iter().enumerate() {
        let mut rng = sensor_rng(seed, idx);
        let script: Vec<&ScriptEntry> = cfg.script.iter().filter(|e| e.sensor == id).collect();
        let mut sets: Vec<(f64, f64)> = script
            .iter()
            .filter_map(|e| match e.action {
                Action::Set { value } => Some((e.at, value)),
                _ => None,
            })
            .collect();
        sets.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (at, _) in &sets {
            truth.push((secs_to_us(*at), id.clone(), "step".to_string()));
        }
        let plain = |off: u64, v: f64| -> Outgoing {
            let mut f = Map::new();
            f.insert("acp_id".into(), json!(id));
            f.insert("acp_type".into(), json!(spec.acp_type));
            f.insert("ts".into(), json!(ts(off)));
            f.insert(spec.feature.map_or("value", Feature::name).into(), json!(round4(v)));
            Outgoing { offset_us: off, sensor_idx: idx, topic: format!("sim/{id}"), fields: f }
        };
        let (level0, sd) = (spec.value.level(), spec.value.stddev());
        match &spec.emission {
            Emission::Periodic { interval_secs } => {
                let step = secs_to_us(*interval_secs).max(1);
                let mut off = rng.gen_range(0..step);
                while off < duration_us {
                    let v = level_at(level0, &sets, off as f64 / 1e6) + noise(&mut rng, sd);
                    messages.push(plain(off, v));
                    off += step;
                }
            }
            Emission::Smart { sample_secs, policy } => {
                let step = secs_to_us(*sample_secs).max(1);
                let mut filter = SmartFilter::new(policy.clone());
                let mut off = 0;
                while off < duration_us {
                    let v = level_at(level0, &sets, off as f64 / 1e6) + noise(&mut rng, sd);
                    let t = Timestamp::from_micros(start_us + off);
                    if filter.offer(&t, v).is_some() {
                        messages.push(plain(off, v));
                    }
                    off += step;
                }
            }
            Emission::Coffee { sample_secs, report_secs, weight_noise_kg, config } => {
                let step = secs_to_us(*sample_secs).max(1);
                let report = report_secs.map_or(step, secs_to_us).max(1);
                let mut model = PotModel::new(script, config);
                let mut state = CoffeeState::new(config);
                let mut labels = Vec::new();
                let mut last_report: Option<u64> = None;
                let mut off = 0;
                while off < duration_us {
                    let mut inputs = model.advance(off as f64 / 1e6, &mut labels);
                    inputs.weight = round4((inputs.weight + noise(&mut rng, *weight_noise_kg)).max(0.0));
                    let t = Timestamp::from_micros(start_us + off);
                    let (next, events) = coffee_step(&state, config, inputs, &t);
                    state = next;
                    let reading = |event: Option<&str>| {
                        let mut f = Map::new();
                        f.insert("node".into(), json!(id));
                        f.insert("ts".into(), json!(ts(off)));
                        f.insert("weight".into(), json!(inputs.weight));
                        f.insert("grinder_power".into(), json!(inputs.grinder_w));
                        f.insert("brewer_power".into(), json!(inputs.brewer_w));
                        if let Some(e) = event {
                            f.insert("event".into(), json!(e));
                        }
                        Outgoing { offset_us: off, sensor_idx: idx, topic: format!("csn/{id}/coffee"), fields: f }
                    };
                    for e in &events {
                        messages.push(reading(Some(e.name())));
                    }
                    if events.is_empty() && last_report.is_none_or(|r| off - r >= report) {
                        messages.push(reading(None));
                        last_report = Some(off);
                    } else if !events.is_empty() {
                        last_report = Some(off);
                    }
                    off += step;
                }
                truth.extend(
                    labels.into_iter().filter(|(t, _)| *t < cfg.duration).map(|(t, e)| (secs_to_us(t), id.clone(), e.to_string())),
                );
            }
        }
    }
    // stable: same-instant messages keep per-sensor generation order
    messages.sort_by_key(|m| (m.offset_us, m.sensor_idx));
    truth.sort_by_key(|a| a.0);
    Generated { messages, truth }
}

struct Platform {
    broker: Broker,
    rts: Rts,
    stream: ClientStream,
    feed: Arc<crate::rts::FeedCounters>,
}

fn platform(clock: Arc<dyn Clock>, mode: RtsMode, data_dir: Option<&Path>) -> Result<Platform, SimError> {
    let platform_err = |e: String| SimError::Platform(e);
    let broker = Broker::with_options("sim", 1 << 20, clock.clone());
    let rts = Rts::with_mailbox_depth(mode, clock, 1 << 20);
    let decoders = Arc::new(DecoderManager::with_builtin());
    let feed = FeedHandler::new(decoders);
    let counters = feed.counters();
    let sub = broker.subscribe("#").map_err(|e| platform_err(e.to_string()))?;
    rts.deploy(VerticleSpec::on_broker("feed", VerticleClass::Ingestion, sub, feed)).map_err(|e| platform_err(e.to_string()))?;
    let (monitor, handle) = RtMonitor::new(DEFAULT_SUBSCRIPTION_CAP);
    rts.deploy(VerticleSpec::on_bus("rtmonitor", VerticleClass::Outbound, &[FEED_ADDRESS], monitor))
        .map_err(|e| platform_err(e.to_string()))?;
    if let Some(dir) = data_dir {
        rts.deploy(VerticleSpec::on_bus("filer", VerticleClass::Storage, &[FEED_ADDRESS], MessageFiler::new(dir)))
            .map_err(|e| platform_err(e.to_string()))?;
    }
    let stream = handle.subscribe("sim-client", MonitorFilter::default()).map_err(|e| platform_err(e.to_string()))?;
    Ok(Platform { broker, rts, stream, feed: counters })
}

fn record(d: &Delivery, t_client: Timestamp) -> Option<TraceRecord> {
    let env = d.event.body.envelope()?;
    let orig = env.payload_original();
    let stamp = |k: &str| orig.get(k).and_then(Value::as_str).and_then(|s| Timestamp::parse(s).ok());
    Some(TraceRecord {
        seq: orig.get("seq").and_then(Value::as_u64)?,
        acp_id: env.acp_id().to_string(),
        t_emit: stamp("ts")?,
        t_gateway: stamp("gw_ts")?,
        t_broker: d.event.received_at.clone().unwrap_or_else(|| d.event.published_at.clone()),
        t_bus: d.event.published_at.clone(),
        t_client,
        acp_event: env.acp_event().map(str::to_string),
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Deploy a message filer writing day shards under this directory.
    pub data_dir: Option<std::path::PathBuf>,
    /// Overrides the config's seed.
    pub seed: Option<u64>,
}

/// Runs a scenario end to end through broker, decoders, event bus and
/// monitor. Virtual mode is instantaneous and deterministic; wall mode paces
/// messages in real time and measures real platform latency.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioTrace, SimError> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let generated = generate(cfg, seed);
    let start_us = (cfg.start().as_nanos() / 1000) as u64;
    let gateway = cfg.latency_models.get(GATEWAY_STAGE).cloned().unwrap_or(LatencyModel::Zero);
    let mut lat_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03);

    let mut outgoing: Vec<(f64, Outgoing)> =
        generated.messages.into_iter().map(|m| (gateway.sample(&mut lat_rng), m)).collect();
    for (seq, (_, m)) in outgoing.iter_mut().enumerate() {
        m.fields.insert("seq".into(), json!(seq as u64));
    }
    let truth = generated
        .truth
        .into_iter()
        .map(|(off, sensor, event)| GroundTruth { t: Timestamp::from_micros(start_us + off), sensor, event })
        .collect();
    let emitted = outgoing.len() as u64;

    let records = match cfg.clock {
        ClockMode::Virtual => run_virtual(start_us, outgoing, opts.data_dir.as_deref())?,
        ClockMode::Wall => run_wall(outgoing, opts.data_dir.as_deref())?,
    };
    let (records, deadlettered) = records;
    Ok(ScenarioTrace { records, ground_truth: truth, emitted, deadlettered })
}

fn run_virtual(
    start_us: u64,
    mut outgoing: Vec<(f64, Outgoing)>,
    data_dir: Option<&Path>,
) -> Result<(Vec<TraceRecord>, u64), SimError> {
    let clock = Arc::new(VirtualClock::starting_at(&Timestamp::from_micros(start_us)));
    let p = platform(clock.clone(), RtsMode::Inline, data_dir)?;
    let arrival = |lat: f64, m: &Outgoing| Timestamp::from_micros(start_us + m.offset_us).plus_millis_f64(lat);
    // network reordering: the gateway sees messages in arrival order
    outgoing.sort_by(|(la, a), (lb, b)| {
        arrival(*la, a).cmp(&arrival(*lb, b)).then(a.fields["seq"].as_u64().cmp(&b.fields["seq"].as_u64()))
    });
    let mut records = Vec::with_capacity(outgoing.len());
    for (lat, mut m) in outgoing {
        let t_gw = arrival(lat, &m);
        clock.set(&t_gw);
        m.fields.insert("gw_ts".into(), json!(t_gw.to_string()));
        let body = serde_json::to_vec(&Value::Object(m.fields)).expect("json");
        p.broker.publish(&m.topic, body).map_err(|e| SimError::Platform(e.to_string()))?;
        p.rts.pump();
        for d in p.stream.drain() {
            records.extend(record(&d, clock.now()));
        }
    }
    let (_, _, dead) = p.feed.get();
    p.rts.shutdown();
    Ok((records, dead))
}

fn run_wall(mut outgoing: Vec<(f64, Outgoing)>, data_dir: Option<&Path>) -> Result<(Vec<TraceRecord>, u64), SimError> {
    let p = platform(Arc::new(SystemClock), RtsMode::Threaded, data_dir)?;
    let expected = outgoing.len();
    let stream = p.stream;
    let collector = thread::spawn(move || {
        let mut got = Vec::with_capacity(expected);
        let mut idle_since: Option<Instant> = None;
        while got.len() < expected {
            match stream.recv_timeout(Duration::from_millis(50)) {
                Some(d) => {
                    got.push((d, Timestamp::now()));
                    idle_since = None;
                }
                None => {
                    let since = *idle_since.get_or_insert_with(Instant::now);
                    if since.elapsed() > Duration::from_secs(5) {
                        break;
                    }
                }
            }
        }
        got
    });

    // due time = scheduled emission + injected network delay
    let due = |lat: f64, m: &Outgoing| m.offset_us as f64 / 1e6 + lat / 1e3;
    outgoing.sort_by(|(la, a), (lb, b)| due(*la, a).total_cmp(&due(*lb, b)));
    let t0 = Instant::now();
    let t0_wall = Timestamp::now();
    for (lat, mut m) in outgoing {
        let target = Duration::from_secs_f64(due(lat, &m));
        if let Some(wait) = target.checked_sub(t0.elapsed()) {
            thread::sleep(wait);
        }
        let t_emit = t0_wall.plus_nanos(u128::from(m.offset_us) * 1000);
        m.fields.insert("ts".into(), json!(t_emit.to_string()));
        m.fields.insert("gw_ts".into(), json!(Timestamp::now().to_string()));
        let body = serde_json::to_vec(&Value::Object(m.fields)).expect("json");
        p.broker.publish(&m.topic, body).map_err(|e| SimError::Platform(e.to_string()))?;
    }
    let got = collector.join().map_err(|_| SimError::Platform("collector panicked".into()))?;
    p.rts.wait_idle(Duration::from_secs(5));
    let (_, _, dead) = p.feed.get();
    p.rts.shutdown();
    let mut records: Vec<TraceRecord> = got.iter().filter_map(|(d, t)| record(d, t.clone())).collect();
    records.sort_by_key(|r| r.seq);
    Ok((records, dead))
}

/// A ten-hour brew day (08:00 to 18:00 UTC) for one coffee node: four
/// brews, cups poured in place and with the pot lifted, and a wash after
/// each pot runs out.
pub fn brew_day_config(node: &str, weight_noise_kg: f64, seed: u64) -> ScenarioConfig {
    let mut script = Vec::new();
    let mut push = |at: f64, action: Action| script.push(ScriptEntry { at, sensor: node.to_string(), action });
    for (i, brew_at) in [0.0, 9000.0, 18_000.0, 27_000.0].into_iter().enumerate() {
        push(brew_at + 60.0, Action::Grind { secs: 30.0, watts: 150.0 });
        push(brew_at + 180.0, Action::Brew { secs: 360.0, kg: 2.0, watts: 900.0 });
        // eight cups over the following hour and a half
        for cup in 0..8 {
            let at = brew_at + 900.0 + cup as f64 * 600.0;
            let lift = if (cup + i) % 3 == 0 { Some(20.0) } else { None };
            push(at, Action::Pour { cups: 1, lift_secs: lift });
        }
        push(brew_at + 6000.0, Action::Remove);
        push(brew_at + 6300.0, Action::Replace { coffee_kg: 0.0 });
    }
    ScenarioConfig {
        seed,
        duration: 36_000.0,
        clock: ClockMode::Virtual,
        // 2020-05-14T08:00:00Z
        start: Some(Timestamp::from_secs(1_589_443_200)),
        sensors: vec![SensorSpec {
            id: node.to_string(),
            count: 1,
            acp_type: "coffee-node".into(),
            feature: None,
            emission: Emission::Coffee {
                sample_secs: 5.0,
                report_secs: Some(300.0),
                weight_noise_kg,
                config: CoffeeConfig::default(),
            },
            value: ValueModel::default(),
        }],
        script,
        latency_models: BTreeMap::new(),
    }
}

/// Precision/recall of detected events against ground truth. A detection
/// matches the earliest unmatched truth label with the same sensor and
/// event within `tolerance_secs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchStats {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchStats {
    pub fn precision(&self) -> f64 {
        let d = self.true_positives + self.false_positives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.true_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

pub fn match_events(truth: &[GroundTruth], detected: &[GroundTruth], tolerance_secs: f64) -> MatchStats {
    let mut used = vec![false; truth.len()];
    let mut tp = 0;
    for d in detected {
        let hit = truth.iter().enumerate().find(|(i, g)| {
            !used[*i] && g.sensor == d.sensor && g.event == d.event && d.t.secs_since(&g.t).abs() <= tolerance_secs
        });
        if let Some((i, _)) = hit {
            used[i] = true;
            tp += 1;
        }
    }
    MatchStats { true_positives: tp, false_positives: detected.len() - tp, false_negatives: truth.len() - tp }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fleet(count: usize, interval: f64, duration: f64) -> ScenarioConfig {
        ScenarioConfig::from_json(&format!(
            r#"{{"seed": 3, "duration": {duration},
                "sensors": [{{"id": "co2", "count": {count}, "type": "co2", "feature": "co2",
                              "emission": {{"kind": "periodic", "interval_secs": {interval}}},
                              "value": {{"kind": "normal", "mean": 420, "stddev": 15}}}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn periodic_fleet_counts_and_conservation() {
        let trace = run_scenario(&fleet(500, 300.0, 3600.0), &RunOptions::default()).unwrap();
        assert_eq!(trace.emitted, 6000);
        assert_eq!(trace.records.len(), 6000);
        assert!(trace.conserved());
        for r in &trace.records {
            assert!(r.stamps().windows(2).all(|w| w[0] <= w[1]), "{r:?}");
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = fleet(20, 60.0, 600.0);
        let a = run_scenario(&cfg, &RunOptions::default()).unwrap();
        let b = run_scenario(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(a.trace_ndjson(), b.trace_ndjson());
        let c = run_scenario(&cfg, &RunOptions { seed: Some(4), ..RunOptions::default() }).unwrap();
        assert_ne!(a.trace_ndjson(), c.trace_ndjson());
    }

    #[test]
    fn brew_day_noiseless_matches_script() {
        let trace = run_scenario(&brew_day_config("csn-coffee", 0.0, 1), &RunOptions::default()).unwrap();
        let names = |v: &[GroundTruth]| v.iter().map(|g| g.event.clone()).collect::<Vec<_>>();
        let detected = trace.detected_events();
        // per brew: grind, new pot, 8 pours, empty, wash removal; plus 11 lifted pours
        assert_eq!(trace.ground_truth.len(), 4 * 12 + 11);
        assert_eq!(names(&detected), names(&trace.ground_truth));
        let m = match_events(&trace.ground_truth, &detected, 30.0);
        assert_eq!(m.f1(), 1.0);
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ScenarioConfig::from_json(
            r#"{"duration": 10, "sensors": [{"id": "a", "type": "t", "feature": "co2", "emission": {"kind": "periodic", "interval_secs": 0}}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Config { ref path, .. } if path == "sensors[0].emission.interval_secs"), "{err}");
        let err = ScenarioConfig::from_json(
            r#"{"duration": 10, "sensors": [], "latency_models": {"bus": {"kind": "zero"}}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Config { ref path, .. } if path == "latency_models.bus"));
    }

    #[test]
    fn injected_gateway_latency_reordering_is_stamped() {
        let mut cfg = fleet(50, 10.0, 100.0);
        cfg.latency_models.insert(GATEWAY_STAGE.into(), LatencyModel::Normal { mean_ms: 57.15, stddev_ms: 10.21 });
        let trace = run_scenario(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(trace.records.len(), 500);
        let gw: Vec<f64> = trace.records.iter().map(|r| r.t_gateway.millis_since(&r.t_emit)).collect();
        let mean = gw.iter().sum::<f64>() / gw.len() as f64;
        assert!((mean - 57.15).abs() < 3.0, "{mean}");
        assert!(trace.records.iter().all(|r| r.t_broker == r.t_gateway && r.t_client == r.t_bus));
    }
}
