use std::collections::{HashMap, HashSet, VecDeque};

use serde_json::json;

use super::engine::{AtomicEvent, CepEngine, ComplexEvent, SensorPlace, SensorPlaces};
use super::stats::{divergence_score, mean, pearson, temporal_params, Correlation};
use crate::rts::{Context, Input, Verticle};
use crate::metadata::MetadataStore;
use crate::model::{Envelope, Feature, Position, Timestamp};

pub const DEFAULT_OMEGA_SECS: f64 = 15.0 * 60.0;
pub const DEFAULT_THETA: f64 = 3.0;
pub const DEFAULT_C_MIN: f64 = 0.3;
pub const DEFAULT_FLOOR_HEIGHT: f64 = 4.0;
pub const ATOMIC_ADDRESS: &str = "cep.atomic";
pub const COMPLEX_ADDRESS: &str = "cep.complex";

#[derive(Debug, Clone, PartialEq)]
pub enum Vicinity {
    /// Sensors sharing the observed sensor's parent crate.
    SameCrate,
    /// Sensors within this many metres in the same building.
    Radius(f64),
    Sensors(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VicinityConfig {
    pub vicinity: Vicinity,
    /// Window length ω in seconds.
    pub omega_secs: f64,
    /// Minimum aligned sample pairs for a correlation.
    pub min_overlap: usize,
    /// Baseline length, in multiples of ω, immediately preceding the window.
    pub baseline_windows: f64,
}

impl Default for VicinityConfig {
    fn default() -> Self {
        Self { vicinity: Vicinity::SameCrate, omega_secs: DEFAULT_OMEGA_SECS, min_overlap: 3, baseline_windows: 4.0 }
    }
}

impl VicinityConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.omega_secs > 0.0) {
            return Err(format!("window must be positive, got {}", self.omega_secs));
        }
        if self.min_overlap < 2 {
            return Err(format!("min_overlap must be at least 2, got {}", self.min_overlap));
        }
        if !(self.baseline_windows > 0.0) {
            return Err("baseline length must be positive".into());
        }
        Ok(())
    }
}

/// Input to a detector for one sensor and feature at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub sensor: String,
    pub sensor_type: String,
    pub feature: Feature,
    pub t: Timestamp,
    /// Readings in (t - ω, t].
    pub x: Vec<f64>,
    /// Readings in the baseline period before the window.
    pub baseline: Vec<f64>,
    /// One entry per vicinity sensor with enough aligned samples.
    pub correlations: Vec<(String, Correlation)>,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrelationVector {
    pub values: Vec<(String, Correlation)>,
    /// Vicinity sensors left out, with the number of aligned pairs found.
    pub omitted: Vec<(String, usize)>,
}

fn secs(ts: &Timestamp) -> f64 {
    ts.as_picos() as f64 / 1e12
}

#[derive(Debug, Clone, Default)]
struct Series {
    samples: VecDeque<(f64, f64)>,
}

impl Series {
    /// Keeps samples time-ordered; late samples are inserted in place.
    fn push(&mut self, t: f64, v: f64) {
        let idx = self.samples.partition_point(|(s, _)| *s <= t);
        self.samples.insert(idx, (t, v));
    }

    fn trim_before(&mut self, t: f64) {
        while self.samples.front().is_some_and(|(s, _)| *s < t) {
            self.samples.pop_front();
        }
    }

    fn range(&self, from_exclusive: f64, to_inclusive: f64) -> Vec<(f64, f64)> {
        self.samples.iter().copied().filter(|(t, _)| *t > from_exclusive && *t <= to_inclusive).collect()
    }

    fn nearest(&self, t: f64, slack: f64) -> Option<f64> {
        let idx = self.samples.partition_point(|(s, _)| *s < t);
        let mut best: Option<(f64, f64)> = None;
        for i in [idx.wrapping_sub(1), idx] {
            if let Some(&(s, v)) = self.samples.get(i) {
                let d = (s - t).abs();
                if d <= slack && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, v));
                }
            }
        }
        best.map(|(_, v)| v)
    }
}

/// Per-sensor, per-feature reading history used for feature extraction.
#[derive(Debug, Clone, Default)]
pub struct FeatureState {
    series: HashMap<(String, Feature), Series>,
    types: HashMap<String, String>,
}

impl FeatureState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, sensor: &str, sensor_type: &str, feature: Feature, t: &Timestamp, value: f64, keep_secs: f64) {
        let s = self.series.entry((sensor.to_string(), feature)).or_default();
        let now = secs(t);
        s.push(now, value);
        s.trim_before(now - keep_secs);
        if !self.types.contains_key(sensor) {
            self.types.insert(sensor.to_string(), sensor_type.to_string());
        }
    }

    fn vicinity_of(&self, sensor: &str, feature: Feature, cfg: &VicinityConfig, places: &SensorPlaces) -> Vec<String> {
        let mut out: Vec<String> = match &cfg.vicinity {
            Vicinity::Sensors(list) => list.iter().filter(|s| *s != sensor).cloned().collect(),
            Vicinity::SameCrate => places
                .sensors()
                .filter(|(id, _)| id.as_str() != sensor && places.same_crate(sensor, id))
                .map(|(id, _)| id.clone())
                .collect(),
            Vicinity::Radius(r) => places
                .sensors()
                .filter(|(id, _)| id.as_str() != sensor && places.distance(sensor, id).is_some_and(|d| d <= *r))
                .map(|(id, _)| id.clone())
                .collect(),
        };
        out.retain(|s| self.series.contains_key(&(s.clone(), feature)));
        out.sort();
        out
    }

    /// Correlation of `sensor`'s window with each vicinity sensor, pairing
    /// every window sample with the nearest vicinity sample within ω/|X|.
    pub fn correlation_vector(
        &self,
        sensor: &str,
        feature: Feature,
        cfg: &VicinityConfig,
        places: &SensorPlaces,
        now: &Timestamp,
    ) -> CorrelationVector {
        let mut out = CorrelationVector::default();
        let t = secs(now);
        let Some(own) = self.series.get(&(sensor.to_string(), feature)) else { return out };
        let x = own.range(t - cfg.omega_secs, t);
        if x.is_empty() {
            return out;
        }
        let slack = cfg.omega_secs / x.len() as f64;
        for other in self.vicinity_of(sensor, feature, cfg, places) {
            let ys = &self.series[&(other.clone(), feature)];
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (ti, xi) in &x {
                if let Some(y) = ys.nearest(*ti, slack) {
                    a.push(*xi);
                    b.push(y);
                }
            }
            match pearson(&a, &b, cfg.min_overlap) {
                Ok(c) => out.values.push((other, c)),
                Err(_) => out.omitted.push((other, a.len())),
            }
        }
        out
    }

    pub fn feature_vector(
        &self,
        sensor: &str,
        feature: Feature,
        cfg: &VicinityConfig,
        places: &SensorPlaces,
        now: &Timestamp,
    ) -> Option<FeatureVector> {
        let series = self.series.get(&(sensor.to_string(), feature))?;
        let t = secs(now);
        let x: Vec<f64> = series.range(t - cfg.omega_secs, t).into_iter().map(|(_, v)| v).collect();
        if x.is_empty() {
            return None;
        }
        let base_start = t - cfg.omega_secs * (1.0 + cfg.baseline_windows);
        let baseline: Vec<f64> =
            series.range(base_start, t - cfg.omega_secs).into_iter().map(|(_, v)| v).collect();
        let (month, day, hour) = temporal_params(now);
        Some(FeatureVector {
            sensor: sensor.to_string(),
            sensor_type: self.types.get(sensor).cloned().unwrap_or_default(),
            feature,
            t: now.clone(),
            x,
            baseline,
            correlations: self.correlation_vector(sensor, feature, cfg, places, now).values,
            month,
            day,
            hour,
        })
    }
}

/// Turns a feature vector into zero or more atomic events.
pub trait Detector: Send {
    fn detect(&self, fv: &FeatureVector) -> Vec<AtomicEvent>;
}

/// Fires `<feature>_DIVERGE` when the window mean sits more than `theta`
/// baseline deviations from the baseline mean and the vicinity agrees
/// (mean correlation at least `c_min`; no vicinity means no corroboration needed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticalDetector {
    pub theta: f64,
    pub c_min: f64,
}

impl Default for StatisticalDetector {
    fn default() -> Self {
        Self { theta: DEFAULT_THETA, c_min: DEFAULT_C_MIN }
    }
}

impl Detector for StatisticalDetector {
    fn detect(&self, fv: &FeatureVector) -> Vec<AtomicEvent> {
        let Ok(score) = divergence_score(&fv.x, &fv.baseline) else { return Vec::new() };
        if score <= self.theta {
            return Vec::new();
        }
        if !fv.correlations.is_empty() {
            let corroboration =
                fv.correlations.iter().map(|(_, c)| c.r).sum::<f64>() / fv.correlations.len() as f64;
            if corroboration < self.c_min {
                return Vec::new();
            }
        }
        vec![AtomicEvent {
            event: format!("{}_DIVERGE", fv.feature.name()),
            t: fv.t.clone(),
            value: Some(mean(&fv.x)),
            sensor: fv.sensor.clone(),
            confidence: (score / (2.0 * self.theta)).min(1.0),
        }]
    }
}

/// Placement of every sensor in the store: its parent crate and, when
/// available, a metric position (own in-building location, else its crate's).
pub fn places_from_store(store: &MetadataStore, floor_height: f64) -> SensorPlaces {
    let mut places = SensorPlaces::new();
    let metric = |pos: &Position| match pos {
        Position::Building { building, x, y, floor, zf } => {
            Some((building.clone(), [*x, *y, *floor as f64 * floor_height + zf]))
        }
        _ => None,
    };
    for id in store.ids(crate::metadata::Kind::Sensor) {
        let Ok(s) = store.sensor(&id) else { continue };
        let crate_id = s.parent_crate_id().map(str::to_string);
        let own = s.acp_location.as_ref().and_then(|l| metric(&l.position));
        let position = own.or_else(|| {
            let c = store.crate_(crate_id.as_deref()?).ok()?;
            metric(&c.acp_location?.position)
        });
        places.insert(&id, SensorPlace { crate_id, position });
    }
    places
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub atomic: Vec<AtomicEvent>,
    pub complex: Vec<ComplexEvent>,
}

/// Feature extraction, atomic detection and rule evaluation for a stream of
/// envelopes. Divergence events fire on entry into the diverging state, not
/// on every reading while it lasts. Envelopes that already carry an
/// `acp_event` (smart sensors) become atomic events directly.
pub struct CepPipeline {
    cfg: VicinityConfig,
    state: FeatureState,
    detector: Box<dyn Detector>,
    engine: CepEngine,
    active: HashSet<(String, Feature)>,
}

impl CepPipeline {
    pub fn new(cfg: VicinityConfig, detector: Box<dyn Detector>, engine: CepEngine) -> Self {
        Self { cfg, state: FeatureState::new(), detector, engine, active: HashSet::new() }
    }

    pub fn engine(&self) -> &CepEngine {
        &self.engine
    }

    pub fn state(&self) -> &FeatureState {
        &self.state
    }

    pub fn ingest(&mut self, env: &Envelope) -> PipelineOutput {
        let mut atomic = Vec::new();
        if let Some(e) = env.acp_event() {
            atomic.push(AtomicEvent {
                event: e.to_string(),
                t: env.acp_ts().clone(),
                value: env.acp_event_value().and_then(|v| v.parse().ok()),
                sensor: env.acp_id().to_string(),
                confidence: env.acp_confidence().unwrap_or(1.0),
            });
        }
        let keep = self.cfg.omega_secs * (1.0 + self.cfg.baseline_windows) * 1.1;
        for (feature, value) in env.payload_cooked() {
            self.state.record(env.acp_id(), env.acp_type(), *feature, env.acp_ts(), *value, keep);
        }
        for feature in env.payload_cooked().keys() {
            let Some(fv) =
                self.state.feature_vector(env.acp_id(), *feature, &self.cfg, self.engine.places(), env.acp_ts())
            else {
                continue;
            };
            let events = self.detector.detect(&fv);
            let key = (env.acp_id().to_string(), *feature);
            if events.is_empty() {
                self.active.remove(&key);
            } else if self.active.insert(key) {
                atomic.extend(events);
            }
        }
        let mut complex = Vec::new();
        for a in &atomic {
            complex.extend(self.engine.process(a));
        }
        PipelineOutput { atomic, complex }
    }
}

/// Analysis verticle around [`CepPipeline`]: atomic events go to
/// `cep.atomic`, complex events to `cep.complex`.
pub struct CepVerticle {
    pipeline: CepPipeline,
}

impl CepVerticle {
    pub fn new(pipeline: CepPipeline) -> Self {
        Self { pipeline }
    }
}

impl Verticle for CepVerticle {
    fn handle(&mut self, input: Input<'_>, ctx: &mut Context<'_>) {
        let Input::Bus(ev) = input else { return };
        let Some(env) = ev.body.envelope() else { return };
        let out = self.pipeline.ingest(env);
        for a in &out.atomic {
            ctx.publish(
                ATOMIC_ADDRESS,
                json!({
                    "acp_event": a.event,
                    "acp_ts": a.t.to_string(),
                    "acp_id": a.sensor,
                    "acp_event_value": a.value,
                    "acp_confidence": a.confidence,
                }),
            );
        }
        for c in &out.complex {
            ctx.publish(COMPLEX_ADDRESS, c.to_json());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cep::{parse_rule, EngineConfig};
    use serde_json::Map;

    fn env(id: &str, t: u64, co2: f64) -> Envelope {
        Envelope::builder(id, Timestamp::from_secs(t), "co2", Map::new()).cooked(Feature::Co2, co2).build().unwrap()
    }

    fn room_places(ids: &[&str]) -> SensorPlaces {
        let mut p = SensorPlaces::new();
        for id in ids {
            p.insert(id, SensorPlace { crate_id: Some("R".into()), position: None });
        }
        p
    }

    fn pipeline(ids: &[&str], rules: &[&str]) -> CepPipeline {
        let rules = rules.iter().map(|r| parse_rule(r).unwrap()).collect();
        let engine = CepEngine::new(EngineConfig::default(), rules, room_places(ids));
        CepPipeline::new(VicinityConfig::default(), Box::new(StatisticalDetector::default()), engine)
    }

    /// Independent per-sensor noise around 400 for 75 minutes, then a
    /// rising jump for the listed sensors.
    fn run(p: &mut CepPipeline, ids: &[&str], spiking: &[&str], jump: f64) -> Vec<AtomicEvent> {
        let mut out = Vec::new();
        for minute in 0..90u64 {
            for (k, id) in ids.iter().enumerate() {
                let base = 400.0 + ((minute * 7919 + k as u64 * 104_729) % 17) as f64;
                let bump = if minute >= 75 && spiking.contains(id) { jump + minute as f64 } else { 0.0 };
                out.extend(p.ingest(&env(id, 1_000_000 + minute * 60, base + bump)).atomic);
            }
        }
        out
    }

    #[test]
    fn flat_trace_is_quiet() {
        let ids = ["a", "b"];
        let mut p = pipeline(&ids, &[]);
        assert!(run(&mut p, &ids, &[], 0.0).is_empty());
    }

    #[test]
    fn lone_spike_suppressed_shared_spike_fires() {
        let ids = ["a", "b", "c"];
        let mut p = pipeline(&ids, &[]);
        assert!(run(&mut p, &ids, &["a"], 200.0).is_empty());

        let mut p = pipeline(&ids, &["complex stuffy <= co2_DIVERGE(x) & co2_DIVERGE(y) & samecrate(x,y)"]);
        let events = run(&mut p, &ids, &ids, 200.0);
        let mut sensors: Vec<&str> = events.iter().map(|e| e.sensor.as_str()).collect();
        sensors.sort();
        assert_eq!(sensors, ["a", "b", "c"]);
        assert!(events.iter().all(|e| e.event == "co2_DIVERGE" && (0.0..=1.0).contains(&e.confidence)));
    }

    #[test]
    fn correlation_signs() {
        let mut st = FeatureState::new();
        let places = room_places(&["o", "pos", "neg", "quiet"]);
        for i in 0..15u64 {
            let t = Timestamp::from_secs(10_000 + i * 60);
            let v = (i as f64 * 0.7).sin() * 10.0;
            st.record("o", "x", Feature::Co2, &t, v, 1e9);
            st.record("pos", "x", Feature::Co2, &t, 2.0 * v + 3.0, 1e9);
            st.record("neg", "x", Feature::Co2, &t, -v, 1e9);
        }
        st.record("quiet", "x", Feature::Co2, &Timestamp::from_secs(1), 1.0, 1e9);
        let now = Timestamp::from_secs(10_000 + 14 * 60);
        let cv = st.correlation_vector("o", Feature::Co2, &VicinityConfig::default(), &places, &now);
        let get = |id: &str| cv.values.iter().find(|(s, _)| s == id).unwrap().1.r;
        assert!((get("pos") - 1.0).abs() < 1e-9);
        assert!((get("neg") + 1.0).abs() < 1e-9);
        assert_eq!(cv.omitted, vec![("quiet".to_string(), 0)]);
    }
}
