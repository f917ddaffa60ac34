use std::collections::{HashMap, VecDeque};

use serde_json::{json, Value};

use super::rule::{Constraint, Rule};
use crate::model::{number_value, Timestamp};

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_BINDING_CAP: usize = 10_000;
pub const DEFAULT_CASCADE_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicEvent {
    pub event: String,
    pub t: Timestamp,
    pub value: Option<f64>,
    pub sensor: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEvent {
    pub event: String,
    pub rule: usize,
    pub t: Timestamp,
    /// Sensors of the matched facts, in term order, without repeats.
    pub sensor_ids: Vec<String>,
    /// Fact ids bound to the rule's terms, in term order.
    pub matched: Vec<u64>,
    pub confidence: f64,
}

impl ComplexEvent {
    pub fn to_json(&self) -> Value {
        json!({
            "acp_event": self.event,
            "acp_ts": self.t.to_string(),
            "sensor_ids": self.sensor_ids,
            "acp_confidence": number_value(self.confidence),
        })
    }
}

/// An entry of the fact window. Complex events re-enter as facts with
/// several sensors and no value.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub id: u64,
    pub event: String,
    pub t: Timestamp,
    pub value: Option<f64>,
    pub sensors: Vec<String>,
    pub confidence: f64,
    /// 0 for atomic events, n for a complex event derived through n rule firings.
    pub depth: usize,
}

impl Fact {
    pub fn first_sensor(&self) -> Option<&str> {
        self.sensors.first().map(String::as_str)
    }
}

/// Where a sensor sits, for spatial constraints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorPlace {
    pub crate_id: Option<String>,
    /// Building name and metric (x, y, z).
    pub position: Option<(String, [f64; 3])>,
}

#[derive(Debug, Clone, Default)]
pub struct SensorPlaces {
    places: HashMap<String, SensorPlace>,
}

impl SensorPlaces {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sensor: &str, place: SensorPlace) {
        self.places.insert(sensor.to_string(), place);
    }

    pub fn get(&self, sensor: &str) -> Option<&SensorPlace> {
        self.places.get(sensor)
    }

    pub fn sensors(&self) -> impl Iterator<Item = (&String, &SensorPlace)> {
        self.places.iter()
    }

    /// Metres between two sensors, if both are placed in the same building.
    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        let (ba, pa) = self.get(a)?.position.as_ref()?;
        let (bb, pb) = self.get(b)?.position.as_ref()?;
        if ba != bb {
            return None;
        }
        Some(((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt())
    }

    pub fn same_crate(&self, a: &str, b: &str) -> bool {
        match (self.get(a).and_then(|p| p.crate_id.as_ref()), self.get(b).and_then(|p| p.crate_id.as_ref())) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }
}

/// Checks one constraint against two facts; `fa`/`fb` are the facts bound
/// to the constraint's first and second term.
pub fn constraint_holds(c: &Constraint, fa: &Fact, fb: &Fact, places: &SensorPlaces) -> bool {
    match c {
        Constraint::Before(..) => fa.t < fb.t,
        Constraint::Value { op, threshold, .. } => fa.value.is_some_and(|v| op.holds(v, *threshold)),
        Constraint::Distance { max, .. } => match (fa.first_sensor(), fb.first_sensor()) {
            (Some(a), Some(b)) => places.distance(a, b).is_some_and(|d| d < *max),
            _ => false,
        },
        Constraint::SameCrate(..) => match (fa.first_sensor(), fb.first_sensor()) {
            (Some(a), Some(b)) => places.same_crate(a, b),
            _ => false,
        },
        Constraint::Span { max, .. } => {
            let (x, y) = (fa.t.as_picos(), fb.t.as_picos());
            (x.abs_diff(y) as f64 / 1e12) < *max
        }
    }
}

/// Bounded FIFO of facts.
#[derive(Debug, Clone)]
pub struct FactWindow {
    capacity: usize,
    facts: VecDeque<Fact>,
}

impl FactWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), facts: VecDeque::with_capacity(capacity) }
    }

    /// Appends `fact`, first evicting and returning the oldest entry when full.
    pub fn push(&mut self, fact: Fact) -> Option<Fact> {
        let evicted = if self.facts.len() >= self.capacity { self.facts.pop_front() } else { None };
        self.facts.push_back(fact);
        evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub window: usize,
    /// Search nodes explored per rule evaluation before giving up.
    pub binding_cap: usize,
    /// Complex events deeper than this are reported but not fed back.
    pub cascade_depth: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, binding_cap: DEFAULT_BINDING_CAP, cascade_depth: DEFAULT_CASCADE_DEPTH }
    }
}

/// Incremental rule matcher over a fact window. Only bindings that include
/// the newly asserted fact are explored.
pub struct CepEngine {
    cfg: EngineConfig,
    rules: Vec<Rule>,
    window: FactWindow,
    places: SensorPlaces,
    next_id: u64,
    overflows: u64,
}

impl CepEngine {
    pub fn new(cfg: EngineConfig, rules: Vec<Rule>, places: SensorPlaces) -> Self {
        let window = FactWindow::new(cfg.window);
        Self { cfg, rules, window, places, next_id: 0, overflows: 0 }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn window(&self) -> &FactWindow {
        &self.window
    }

    pub fn places(&self) -> &SensorPlaces {
        &self.places
    }

    pub fn places_mut(&mut self) -> &mut SensorPlaces {
        &mut self.places
    }

    /// Evaluations abandoned at the binding cap.
    pub fn overflows(&self) -> u64 {
        self.overflows
    }

    fn make_fact(&mut self, event: &str, t: Timestamp, value: Option<f64>, sensors: Vec<String>, confidence: f64, depth: usize) -> Fact {
        self.next_id += 1;
        Fact { id: self.next_id, event: event.to_string(), t, value, sensors, confidence, depth }
    }

    /// Adds an atomic event to the window and runs the rules, feeding any
    /// complex events back in as facts (bounded by the cascade depth).
    /// Returns every complex event produced, in production order.
    pub fn process(&mut self, ev: &AtomicEvent) -> Vec<ComplexEvent> {
        let fact = self.make_fact(&ev.event, ev.t.clone(), ev.value, vec![ev.sensor.clone()], ev.confidence, 0);
        let mut out = Vec::new();
        let mut queue = VecDeque::from([fact]);
        while let Some(f) = queue.pop_front() {
            self.assert_fact(f.clone());
            for ce in self.evaluate(&f) {
                if f.depth < self.cfg.cascade_depth {
                    let fb = self.make_fact(&ce.event, ce.t.clone(), None, ce.sensor_ids.clone(), ce.confidence, f.depth + 1);
                    queue.push_back(fb);
                }
                out.push(ce);
            }
        }
        out
    }

    /// Appends to the window; returns the evicted fact, if any.
    pub fn assert_fact(&mut self, fact: Fact) -> Option<Fact> {
        self.window.push(fact)
    }

    /// Complex events satisfied by `new_fact` together with other facts in
    /// the window, ordered by rule then by bound fact ids.
    pub fn evaluate(&mut self, new_fact: &Fact) -> Vec<ComplexEvent> {
        let mut out = Vec::new();
        for (rule_idx, rule) in self.rules.iter().enumerate() {
            let mut found: Vec<Vec<usize>> = Vec::new();
            let candidates: Vec<Vec<usize>> = rule
                .terms
                .iter()
                .map(|t| {
                    self.window
                        .iter()
                        .enumerate()
                        .filter(|(_, f)| f.event == t.event && f.id != new_fact.id)
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect();
            let facts: Vec<&Fact> = self.window.iter().collect();
            let mut budget = self.cfg.binding_cap;
            let mut overflow = false;
            for pin in 0..rule.terms.len() {
                if rule.terms[pin].event != new_fact.event {
                    continue;
                }
                let mut search = Search {
                    rule,
                    facts: &facts,
                    new_fact,
                    pin,
                    candidates: &candidates,
                    places: &self.places,
                    binding: vec![None; rule.terms.len()],
                    budget: &mut budget,
                    found: &mut found,
                };
                if !search.run(0) {
                    overflow = true;
                    break;
                }
            }
            if overflow {
                self.overflows += 1;
            }
            let mut events: Vec<ComplexEvent> = found
                .into_iter()
                .map(|b| {
                    let bound: Vec<&Fact> = b.iter().map(|&i| if i == usize::MAX { new_fact } else { facts[i] }).collect();
                    let mut sensor_ids: Vec<String> = Vec::new();
                    for f in &bound {
                        for s in &f.sensors {
                            if !sensor_ids.contains(s) {
                                sensor_ids.push(s.clone());
                            }
                        }
                    }
                    ComplexEvent {
                        event: rule.name.clone(),
                        rule: rule_idx,
                        t: new_fact.t.clone(),
                        sensor_ids,
                        matched: bound.iter().map(|f| f.id).collect(),
                        confidence: bound.iter().map(|f| f.confidence).fold(f64::INFINITY, f64::min),
                    }
                })
                .collect();
            events.sort_by(|a, b| a.matched.cmp(&b.matched));
            out.extend(events);
        }
        out
    }
}

/// Backtracking over term positions with `pin` fixed to the new fact.
/// Binding entries hold window indices; `usize::MAX` marks the new fact.
struct Search<'a> {
    rule: &'a Rule,
    facts: &'a [&'a Fact],
    new_fact: &'a Fact,
    pin: usize,
    candidates: &'a [Vec<usize>],
    places: &'a SensorPlaces,
    binding: Vec<Option<usize>>,
    budget: &'a mut usize,
    found: &'a mut Vec<Vec<usize>>,
}

impl Search<'_> {
    fn fact(&self, slot: usize) -> &Fact {
        if slot == usize::MAX {
            self.new_fact
        } else {
            self.facts[slot]
        }
    }

    /// Order in which terms are bound: the pinned term first, then the rest.
    fn term_at(&self, depth: usize) -> usize {
        if depth == 0 {
            self.pin
        } else if depth <= self.pin {
            depth - 1
        } else {
            depth
        }
    }

    /// Constraints whose terms are all bound and at least one was just bound.
    fn consistent(&self, just_bound: usize) -> bool {
        self.rule.constraints.iter().all(|c| {
            let (a, b) = c.terms();
            if a != just_bound && b != just_bound {
                return true;
            }
            match (self.binding[a], self.binding[b]) {
                (Some(x), Some(y)) => constraint_holds(c, self.fact(x), self.fact(y), self.places),
                _ => true,
            }
        })
    }

    /// Returns false when the budget ran out.
    fn run(&mut self, depth: usize) -> bool {
        if depth == self.rule.terms.len() {
            self.found.push(self.binding.iter().map(|b| b.unwrap()).collect());
            return true;
        }
        let term = self.term_at(depth);
        let slots: Vec<usize> = if depth == 0 { vec![usize::MAX] } else { self.candidates[term].clone() };
        for slot in slots {
            if *self.budget == 0 {
                return false;
            }
            *self.budget -= 1;
            if self.binding.contains(&Some(slot)) {
                continue;
            }
            self.binding[term] = Some(slot);
            if self.consistent(term) && !self.run(depth + 1) {
                self.binding[term] = None;
                return false;
            }
            self.binding[term] = None;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cep::parse_rule;

    fn atomic(event: &str, t: u64, sensor: &str) -> AtomicEvent {
        AtomicEvent { event: event.into(), t: Timestamp::from_secs(t), value: Some(1.0), sensor: sensor.into(), confidence: 0.9 }
    }

    fn engine(rules: &[&str]) -> CepEngine {
        let rules = rules.iter().map(|r| parse_rule(r).unwrap()).collect();
        CepEngine::new(EngineConfig::default(), rules, SensorPlaces::new())
    }

    #[test]
    fn fifo_eviction() {
        let mut w = FactWindow::new(2);
        let f = |id| Fact { id, event: "e".into(), t: Timestamp::from_secs(id), value: None, sensors: vec![], confidence: 1.0, depth: 0 };
        assert!(w.push(f(1)).is_none());
        assert!(w.push(f(2)).is_none());
        assert_eq!(w.push(f(3)).unwrap().id, 1);
        assert_eq!(w.iter().map(|f| f.id).collect::<Vec<_>>(), [2, 3]);
    }

    #[test]
    fn ordering_constraint() {
        let mut e = engine(&["complex c <= x(a) & y(b) & t(a) < t(b)"]);
        assert!(e.process(&atomic("x", 1, "s1")).is_empty());
        let out = e.process(&atomic("y", 2, "s2"));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].sensor_ids, ["s1", "s2"]);
        assert_eq!(out[0].t, Timestamp::from_secs(2));
        assert_eq!(out[0].confidence, 0.9);

        let mut e = engine(&["complex c <= x(a) & y(b) & t(a) < t(b)"]);
        e.process(&atomic("y", 1, "s2"));
        assert!(e.process(&atomic("x", 2, "s1")).is_empty());
    }

    #[test]
    fn complex_events_feed_back() {
        let mut e = engine(&["complex c <= x(a) & y(b)", "complex d <= c(p) & z(q) & t(p) < t(q)"]);
        e.process(&atomic("x", 1, "s1"));
        let out = e.process(&atomic("y", 2, "s2"));
        assert_eq!(out.len(), 1);
        let out = e.process(&atomic("z", 3, "s3"));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].event, "d");
        assert_eq!(out[0].sensor_ids, ["s1", "s2", "s3"]);
    }

    #[test]
    fn spatial_constraints() {
        let mut places = SensorPlaces::new();
        places.insert("s1", SensorPlace { crate_id: Some("R1".into()), position: Some(("B".into(), [0.0, 0.0, 0.0])) });
        places.insert("s2", SensorPlace { crate_id: Some("R1".into()), position: Some(("B".into(), [3.0, 4.0, 0.0])) });
        places.insert("s3", SensorPlace { crate_id: Some("R2".into()), position: Some(("C".into(), [0.0, 0.0, 0.0])) });
        assert_eq!(places.distance("s1", "s2"), Some(5.0));
        assert_eq!(places.distance("s1", "s1"), Some(0.0));
        assert_eq!(places.distance("s1", "s3"), None);
        let rules = vec![parse_rule("complex near <= x(a) & y(b) & dist(a,b) < 5.5 & samecrate(a,b)").unwrap()];
        let mut e = CepEngine::new(EngineConfig::default(), rules, places);
        e.process(&atomic("x", 1, "s1"));
        assert_eq!(e.process(&atomic("y", 2, "s2")).len(), 1);
        assert!(e.process(&atomic("y", 3, "s3")).is_empty());
    }

    #[test]
    fn cap_counts_overflow() {
        let rules = vec![parse_rule("complex c <= x(a) & x(b) & x(c)").unwrap()];
        let mut e = CepEngine::new(EngineConfig { binding_cap: 50, ..EngineConfig::default() }, rules, SensorPlaces::new());
        for t in 0..20 {
            e.process(&atomic("x", t, "s"));
        }
        assert!(e.overflows() > 0);
    }
}
