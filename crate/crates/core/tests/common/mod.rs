//! Reference implementations shared by the integration tests. Each one is
//! deliberately naive and written without calling the code it checks.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sitestream_core::broker::{bridge, BridgeConfig, BridgeDirection, Broker};
use sitestream_core::cep::{CepEngine, EngineConfig, CmpOp, Constraint, Fact, Rule, SensorPlace, SensorPlaces, Term};
use sitestream_core::model::Timestamp;

pub const EVENTS: [&str; 4] = ["a", "b", "c", "d"];

pub fn secs(t: &Timestamp) -> f64 {
    t.as_picos() as f64 / 1e12
}

/// Six sensors over two crates and two buildings, one of them unplaced.
pub fn test_places() -> SensorPlaces {
    let mut p = SensorPlaces::new();
    let spots: [(Option<&str>, Option<(&str, [f64; 3])>); 6] = [
        (Some("c0"), Some(("B", [0.0, 0.0, 0.0]))),
        (Some("c0"), Some(("B", [3.0, 4.0, 0.0]))),
        (Some("c1"), Some(("B", [10.0, 0.0, 4.0]))),
        (Some("c1"), Some(("C", [0.0, 0.0, 0.0]))),
        (None, Some(("B", [1.0, 1.0, 0.0]))),
        (None, None),
    ];
    for (i, (c, pos)) in spots.into_iter().enumerate() {
        p.insert(
            &format!("s{i}"),
            SensorPlace { crate_id: c.map(str::to_string), position: pos.map(|(b, x)| (b.to_string(), x)) },
        );
    }
    p
}

pub fn random_rule(rng: &mut impl Rng, name: &str) -> Rule {
    let n = rng.gen_range(2..=3);
    let terms: Vec<Term> =
        (0..n).map(|i| Term { event: EVENTS[rng.gen_range(0..EVENTS.len())].to_string(), var: format!("x{i}") }).collect();
    let mut constraints = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n);
        if b == a {
            b = (a + 1) % n;
        }
        let op = *[CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq].choose(rng).unwrap();
        constraints.push(match rng.gen_range(0..5) {
            0 => Constraint::Before(a, b),
            1 => Constraint::Value { term: a, op, threshold: rng.gen_range(0..10) as f64 },
            2 => Constraint::Distance { a, b, max: rng.gen_range(1..12) as f64 },
            3 => Constraint::SameCrate(a, b),
            _ => Constraint::Span { a, b, max: rng.gen_range(10..300) as f64 },
        });
    }
    Rule { name: name.to_string(), terms, constraints }
}

pub fn random_fact(rng: &mut impl Rng, id: u64) -> Fact {
    let t = Timestamp::from_micros(1_000_000_000 * 1_000_000 + rng.gen_range(0..600_000_000u64));
    Fact {
        id,
        event: EVENTS[rng.gen_range(0..EVENTS.len())].to_string(),
        t,
        value: if rng.gen_bool(0.8) { Some(rng.gen_range(0..100) as f64 / 10.0) } else { None },
        sensors: vec![format!("s{}", rng.gen_range(0..6))],
        confidence: rng.gen_range(0.1..1.0),
        depth: 0,
    }
}

fn place_of<'a>(places: &'a SensorPlaces, f: &Fact) -> Option<&'a SensorPlace> {
    places.get(f.sensors.first()?)
}

fn holds(c: &Constraint, fs: &[&Fact], places: &SensorPlaces) -> bool {
    match *c {
        Constraint::Before(a, b) => fs[a].t.as_picos() < fs[b].t.as_picos(),
        Constraint::Value { term, op, threshold } => match fs[term].value {
            None => false,
            Some(v) => match op {
                CmpOp::Lt => v < threshold,
                CmpOp::Le => v <= threshold,
                CmpOp::Gt => v > threshold,
                CmpOp::Ge => v >= threshold,
                CmpOp::Eq => v == threshold,
            },
        },
        Constraint::Distance { a, b, max } => {
            let pa = place_of(places, fs[a]).and_then(|p| p.position.clone());
            let pb = place_of(places, fs[b]).and_then(|p| p.position.clone());
            match (pa, pb) {
                (Some((ba, xa)), Some((bb, xb))) if ba == bb => {
                    let d2: f64 = (0..3).map(|k| (xa[k] - xb[k]).powi(2)).sum();
                    d2.sqrt() < max
                }
                _ => false,
            }
        }
        Constraint::SameCrate(a, b) => {
            let ca = place_of(places, fs[a]).and_then(|p| p.crate_id.clone());
            let cb = place_of(places, fs[b]).and_then(|p| p.crate_id.clone());
            ca.is_some() && ca == cb
        }
        Constraint::Span { a, b, max } => {
            let d = fs[a].t.as_picos().abs_diff(fs[b].t.as_picos()) as f64 / 1e12;
            d < max
        }
    }
}

/// Every injective assignment of window facts to the rule's terms that
/// satisfies all constraints, as fact-id tuples. Enumerates the whole
/// window with no regard to which fact arrived last.
pub fn full_window_matches(window: &[Fact], rule: &Rule, places: &SensorPlaces) -> BTreeSet<Vec<u64>> {
    let typed: Vec<Vec<&Fact>> =
        rule.terms.iter().map(|t| window.iter().filter(|f| f.event == t.event).collect()).collect();
    let mut out = BTreeSet::new();
    if typed.iter().any(Vec::is_empty) {
        return out;
    }
    let n = rule.terms.len();
    let mut idx = vec![0usize; n];
    loop {
        let fs: Vec<&Fact> = (0..n).map(|k| typed[k][idx[k]]).collect();
        let distinct = (0..n).all(|i| (0..i).all(|j| fs[i].id != fs[j].id));
        if distinct && rule.constraints.iter().all(|c| holds(c, &fs, places)) {
            out.insert(fs.iter().map(|f| f.id).collect());
        }
        let mut k = 0;
        loop {
            if k == n {
                return out;
            }
            idx[k] += 1;
            if idx[k] < typed[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// FIFO window mirror used alongside the engine.
pub struct MirrorWindow {
    pub facts: VecDeque<Fact>,
    pub cap: usize,
}

impl MirrorWindow {
    pub fn new(cap: usize) -> Self {
        Self { facts: VecDeque::new(), cap }
    }

    pub fn push(&mut self, f: Fact) {
        self.facts.push_back(f);
        while self.facts.len() > self.cap {
            self.facts.pop_front();
        }
    }

    pub fn as_vec(&self) -> Vec<Fact> {
        self.facts.iter().cloned().collect()
    }
}

/// Inverse-distance weighting with power 2, from first principles.
pub fn idw_oracle(x: f64, y: f64, sources: &[([f64; 2], f64)]) -> Option<f64> {
    if sources.is_empty() {
        return None;
    }
    let same: Vec<f64> = sources.iter().filter(|(p, _)| p[0] == x && p[1] == y).map(|(_, v)| *v).collect();
    if !same.is_empty() {
        return Some(same.iter().sum::<f64>() / same.len() as f64);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, v) in sources {
        let w = 1.0 / ((p[0] - x).powi(2) + (p[1] - y).powi(2));
        num += w * v;
        den += w;
    }
    Some(num / den)
}

/// Even-odd ray casting without any edge handling.
pub fn ray_cast(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Distance from (x, y) to the nearest polygon edge.
pub fn edge_distance(poly: &[[f64; 2]], x: f64, y: f64) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 { 0.0 } else { (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0) };
            ((a[0] + t * dx - x).powi(2) + (a[1] + t * dy - y).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// MQTT filter matching by direct recursion over levels.
pub fn filter_matches(filter: &str, topic: &str) -> bool {
    fn go(f: &[&str], t: &[&str]) -> bool {
        match (f.first(), t.first()) {
            (Some(&"#"), _) => true,
            (None, None) => true,
            (Some(&"+"), Some(_)) => go(&f[1..], &t[1..]),
            (Some(a), Some(b)) if a == b => go(&f[1..], &t[1..]),
            _ => false,
        }
    }
    let f: Vec<&str> = filter.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    go(&f, &t)
}

/// A directed forwarding leg between broker indices.
#[derive(Debug, Clone)]
pub struct Leg {
    pub from: usize,
    pub to: usize,
    pub filters: Vec<String>,
}

/// Brokers a message published on `start` reaches, by graph search over
/// legs whose filters match the topic. `start` itself is included.
pub fn reachable(legs: &[Leg], start: usize, topic: &str) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(b) = stack.pop() {
        for l in legs.iter().filter(|l| l.from == b) {
            if l.filters.iter().any(|f| filter_matches(f, topic)) && seen.insert(l.to) {
                stack.push(l.to);
            }
        }
    }
    seen
}

const TOPICS: [&str; 5] = ["a/x", "a/y", "b/x", "b/y/z", "c"];
const FILTERS: [&str; 7] = ["#", "a/#", "a/+", "+/x", "b/+/z", "c", "+"];

/// One randomised deployment: three brokers, random one-way legs and
/// subscriptions, publishers whose operations are merged in random order.
/// Returns the number of violated expectations.
pub fn interleaving_case(seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brokers: Vec<Broker> = (0..3).map(|i| Broker::new(&format!("b{i}"))).collect();
    let mut legs = Vec::new();
    let mut handles = Vec::new();
    for from in 0..3 {
        for to in 0..3 {
            if from != to && rng.gen_bool(0.5) {
                let filters = vec![FILTERS.choose(&mut rng).unwrap().to_string()];
                let cfg = BridgeConfig { remote: format!("b{to}"), filters: filters.clone(), direction: BridgeDirection::Out };
                handles.push(bridge(&brokers[from], &brokers[to], &cfg).unwrap());
                legs.push(Leg { from, to, filters });
            }
        }
    }
    let subs: Vec<(usize, &str, _)> = (0..rng.gen_range(1..6))
        .map(|_| {
            let b = rng.gen_range(0..3);
            let f = *FILTERS.choose(&mut rng).unwrap();
            (b, f, brokers[b].subscribe(f).unwrap())
        })
        .collect();
    let publishers = rng.gen_range(1..4);
    let mut scripts: Vec<Vec<(usize, &str)>> = (0..publishers)
        .map(|_| (0..rng.gen_range(0..15)).map(|_| (rng.gen_range(0..3), *TOPICS.choose(&mut rng).unwrap())).collect())
        .collect();
    let mut order: Vec<usize> = scripts.iter().enumerate().flat_map(|(p, s)| std::iter::repeat_n(p, s.len())).collect();
    order.shuffle(&mut rng);
    for s in scripts.iter_mut() {
        s.reverse();
    }
    let mut log = Vec::new();
    for (n, p) in order.into_iter().enumerate() {
        let (b, topic) = scripts[p].pop().unwrap();
        let payload = format!("{p}:{n}");
        brokers[b].publish(topic, payload.as_bytes().to_vec()).unwrap();
        log.push((b, topic, payload));
    }
    let mut violations = 0;
    for (b, f, sub) in &subs {
        let want: Vec<&str> = log
            .iter()
            .filter(|(from, topic, _)| filter_matches(f, topic) && reachable(&legs, *from, topic).contains(b))
            .map(|(_, _, p)| p.as_str())
            .collect();
        let got: Vec<String> =
            sub.drain().into_iter().map(|m| String::from_utf8(m.payload.to_vec()).unwrap()).collect();
        if got != want {
            violations += 1;
        }
    }
    violations
}


/// Feeds a random trace to the engine fact by fact and compares each
/// evaluation with the brute-force matcher. Returns mismatching evaluations.
pub fn cep_trace_discrepancies(seed: u64, facts: usize, window: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules: Vec<_> = (0..rng.gen_range(1..=3)).map(|i| random_rule(&mut rng, &format!("r{i}"))).collect();
    let places = test_places();
    let cfg = EngineConfig { window, binding_cap: usize::MAX, ..EngineConfig::default() };
    let mut engine = CepEngine::new(cfg, rules.clone(), places.clone());
    let mut mirror = MirrorWindow::new(window);
    let mut discrepancies = 0;
    let mut before: Vec<BTreeSet<Vec<u64>>> = vec![BTreeSet::new(); rules.len()];
    for id in 1..=facts as u64 {
        let fact = random_fact(&mut rng, id);
        engine.assert_fact(fact.clone());
        mirror.push(fact.clone());
        let got = engine.evaluate(&fact);
        let window = mirror.as_vec();
        for (ri, rule) in rules.iter().enumerate() {
            let mine: BTreeSet<Vec<u64>> = got.iter().filter(|c| c.rule == ri).map(|c| c.matched.clone()).collect();
            // new matches are those of the current window that did not exist
            // in the previous one
            let now = full_window_matches(&window, rule, &places);
            let want: BTreeSet<Vec<u64>> = now.difference(&before[ri]).cloned().collect();
            if mine != want {
                discrepancies += 1;
            }
            before[ri] = now;
        }
    }
    assert_eq!(engine.overflows(), 0);
    discrepancies
}


/// Applies `ops` random crate upserts and deletions, with stale timestamps
/// and parent cycles mixed in, and checks the store against a plain log.
/// Returns (violations, accepted writes).
pub fn metadata_case(seed: u64, ops: usize) -> (usize, usize) {
    use serde_json::{json, Value};
    use sitestream_core::metadata::{Kind, MetadataStore, StoreError};
    use std::collections::BTreeMap;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = MetadataStore::new();
    let ids: Vec<String> = (0..15).map(|i| format!("k{i}")).collect();
    // accepted writes per id: (micros, body or None for a deletion)
    let mut log: BTreeMap<String, Vec<(u64, Option<Value>)>> = BTreeMap::new();
    let mut violations = 0;
    let base = 1_500_000_000_000_000u64;
    let live_parent = |log: &BTreeMap<String, Vec<(u64, Option<Value>)>>, id: &str| -> Option<String> {
        let (_, body) = log.get(id)?.last()?;
        body.as_ref()?.get("parent_crate_id")?.as_str().map(str::to_string)
    };
    for n in 0..ops {
        let id = ids.choose(&mut rng).unwrap().clone();
        let at = base + rng.gen_range(0..(ops as u64 * 1000));
        let last = log.get(&id).and_then(|v| v.last()).map(|(t, _)| *t);
        let fresh = last.is_none_or(|l| at > l);
        let is_live = log.get(&id).and_then(|v| v.last()).is_some_and(|(_, b)| b.is_some());
        if rng.gen_bool(0.05) {
            let res = store.delete(Kind::Crate, &id, Timestamp::from_micros(at));
            let expect_ok = is_live && fresh;
            if res.is_ok() != expect_ok {
                violations += 1;
            }
            if res.is_ok() {
                log.get_mut(&id).unwrap().push((at, None));
            }
            continue;
        }
        let parent = if rng.gen_bool(0.7) { Some(ids.choose(&mut rng).unwrap().clone()) } else { None };
        let mut body = json!({"crate_id": id, "crate_type": "room", "long-name": format!("v{n}")});
        if let Some(p) = &parent {
            body["parent_crate_id"] = json!(p);
        }
        let cyclic = parent.as_ref().is_some_and(|p| {
            let mut seen = BTreeSet::new();
            let mut cur = Some(p.clone());
            while let Some(c) = cur {
                if c == id {
                    return true;
                }
                if !seen.insert(c.clone()) {
                    return false;
                }
                cur = live_parent(&log, &c);
            }
            false
        });
        let res = store.upsert(Kind::Crate, &id, body.clone(), Timestamp::from_micros(at));
        let expected = if !fresh {
            matches!(res, Err(StoreError::TimestampRegression { .. }))
        } else if cyclic {
            matches!(res, Err(StoreError::CyclicParent { .. }))
        } else {
            res.is_ok()
        };
        if !expected {
            violations += 1;
        }
        if res.is_ok() {
            log.entry(id).or_default().push((at, Some(body)));
        }
    }

    for (id, writes) in &log {
        let Ok(hist) = store.history(Kind::Crate, id) else {
            violations += 1;
            continue;
        };
        if hist.len() != writes.len() {
            violations += 1;
        }
        for (i, r) in hist.iter().enumerate() {
            let next = hist.get(i + 1).map(|n| n.acp_ts.clone());
            if r.acp_ts_end != next || next.as_ref().is_some_and(|n| *n <= r.acp_ts) {
                violations += 1;
            }
        }
        for _ in 0..20 {
            let probe = base + rng.gen_range(0..(ops as u64 * 1000 + 1000));
            let want = writes.iter().rfind(|(t, _)| *t <= probe);
            match (store.get(Kind::Crate, id, Some(&Timestamp::from_micros(probe))), want) {
                (Ok(r), Some((t, body))) => {
                    let body_ok = match body {
                        Some(b) => r.body.get("long-name") == b.get("long-name") && !r.is_tombstone(),
                        None => r.is_tombstone(),
                    };
                    if r.acp_ts != Timestamp::from_micros(*t) || !body_ok {
                        violations += 1;
                    }
                }
                (Err(StoreError::NoRecordAt { .. }), None) => {}
                _ => violations += 1,
            }
        }
    }

    // no live crate reaches itself through parent links
    for id in store.ids(Kind::Crate) {
        let mut seen = BTreeSet::new();
        let mut cur = Some(id.clone());
        while let Some(c) = cur {
            if !seen.insert(c.clone()) {
                violations += 1;
                break;
            }
            cur = store.crate_(&c).ok().and_then(|c| c.parent_crate_id);
        }
    }
    (violations, log.values().map(Vec::len).sum())
}

/// Floor-1 rooms of the demo site as (id, x0, y0, x1, y1).
pub const FLOOR1_ROOMS: [(&str, f64, f64, f64, f64); 2] = [("FE11", 54.97, 0.0, 73.045, 6.106), ("FN05", 10.0, 60.0, 22.0, 70.0)];

/// Random envelope sequence against the demo site with extra placed
/// sensors. After every envelope the incremental heatmap must equal a full
/// rebuild, and every cell must equal IDW over its own room's sensors.
/// Returns the number of violations.
pub fn heatmap_case(seed: u64, steps: usize) -> usize {
    use serde_json::{json, Map};
    use sitestream_core::api::Heatmap;
    use sitestream_core::metadata::{demo_site, Kind};
    use sitestream_core::model::{Envelope, Feature};
    use std::collections::BTreeMap;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = demo_site();
    let t0 = Timestamp::from_secs(1_600_000_000);
    let mut placed: BTreeMap<String, (&str, [f64; 2])> = BTreeMap::new();
    for (room, x0, y0, x1, y1) in FLOOR1_ROOMS {
        for k in 0..rng.gen_range(1..=3) {
            let id = format!("t-{room}-{k}");
            let (x, y) = (rng.gen_range(x0..x1), rng.gen_range(y0..y1));
            let body = json!({"acp_id": id, "type": "temperature",
                "acp_location": {"system": "WGB", "x": x, "y": y, "f": 1, "zf": 0, "parent_crate_id": room}});
            store.upsert(Kind::Sensor, &id, body, t0.clone()).unwrap();
            placed.insert(id, (room, [x, y]));
        }
    }
    let mut senders: Vec<String> = placed.keys().cloned().collect();
    senders.extend(["elsys-co2-0a1b2c".to_string(), "unknown-sensor".to_string()]);
    let cell = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
    let mut h = Heatmap::new(&store, 1, Feature::Temperature, cell).unwrap();
    let mut seen: Vec<Envelope> = Vec::new();
    let mut latest: BTreeMap<String, (Timestamp, f64)> = BTreeMap::new();
    let mut violations = 0;
    for _ in 0..steps {
        let id = senders.choose(&mut rng).unwrap();
        let t = Timestamp::from_secs(1_600_000_000 + rng.gen_range(0..50));
        let v = (rng.gen_range(150..300) as f64) / 10.0;
        let env = Envelope::builder(id, t.clone(), "temperature", Map::new()).cooked(Feature::Temperature, v).build().unwrap();
        let touched = h.apply(&env);
        if placed.contains_key(id) {
            if latest.get(id).is_none_or(|(lt, _)| *lt <= t) {
                latest.insert(id.clone(), (t, v));
                if touched != h.room_cell_count(placed[id].0) {
                    violations += 1;
                }
            }
        } else if touched != 0 {
            violations += 1;
        }
        seen.push(env);
        let full = Heatmap::full(&store, 1, Feature::Temperature, cell, &seen).unwrap();
        let grid = h.grid();
        if grid != full.grid() {
            violations += 1;
        }
        for c in &grid.cells {
            let sources: Vec<([f64; 2], f64)> = placed
                .iter()
                .filter(|(_, (room, _))| *room == c.crate_id)
                .filter_map(|(id, (_, p))| latest.get(id).map(|(_, v)| (*p, *v)))
                .collect();
            let want = idw_oracle(c.x, c.y, &sources);
            let ok = match (c.value, want) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    let (lo, hi) = sources.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (_, v)| (l.min(*v), h.max(*v)));
                    (a - b).abs() <= 1e-9 * b.abs().max(1.0) && a >= lo - 1e-9 && a <= hi + 1e-9
                }
                _ => false,
            };
            if !ok {
                violations += 1;
            }
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDay {
    pub raw: usize,
    pub emitted: usize,
    pub true_events: usize,
    pub missed: usize,
}

/// 24 h of 1 Hz temperature with a slow daily swing, small noise and up to
/// 50 scripted excursions above the alert threshold.
pub fn smart_filter_day(seed: u64) -> FilterDay {
    use sitestream_core::sim::{smart_filter, Alert, FilterPolicy};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_events = rng.gen_range(20..=50);
    // one excursion per slot, so they never overlap
    let slot = 86_400 / n_events;
    let events: Vec<(usize, usize)> = (0..n_events)
        .map(|i| {
            let len = rng.gen_range(30..600);
            (i * slot + rng.gen_range(0..slot - len), len)
        })
        .collect();
    let start = 1_600_000_000u64;
    let mut samples = Vec::with_capacity(86_400);
    for s in 0..86_400usize {
        let base = 21.0 + 2.0 * (2.0 * std::f64::consts::PI * s as f64 / 86_400.0).sin() + rng.gen_range(-0.1..0.1);
        let hot = events.iter().any(|&(on, len)| s >= on && s < on + len);
        samples.push((Timestamp::from_secs(start + s as u64), if hot { 30.0 + rng.gen_range(-0.1..0.1) } else { base }));
    }
    let policy = FilterPolicy { deadband: 1.0, min_interval_secs: 3600.0, alert: Some(Alert::Above { threshold: 26.0 }) };
    let out = smart_filter(&samples, &policy);
    let missed = events
        .iter()
        .filter(|&&(on, _)| !out.iter().any(|e| e.t == Timestamp::from_secs(start + on as u64) && e.value > 26.0))
        .count();
    FilterDay { raw: samples.len(), emitted: out.len(), true_events: n_events, missed }
}

/// Exhaustive check over three brokers: every subset of the six directed
/// legs, each leg with one of three filters, every origin and topic. Each
/// broker must see a message once if the reference search reaches it and
/// never otherwise. Returns (configurations, violations).
pub fn ring_model_check() -> (usize, usize) {
    let leg_pairs: Vec<(usize, usize)> = (0..3).flat_map(|a| (0..3).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    let choices = ["#", "a/#", "+/x"];
    let mut configs = 0;
    let mut violations = 0;
    for code in 0..4usize.pow(6) {
        let mut c = code;
        let mut legs = Vec::new();
        for &(from, to) in &leg_pairs {
            let pick = c % 4;
            c /= 4;
            if pick > 0 {
                legs.push(Leg { from, to, filters: vec![choices[pick - 1].to_string()] });
            }
        }
        configs += 1;
        let brokers: Vec<Broker> = (0..3).map(|i| Broker::new(&format!("r{i}"))).collect();
        let _handles: Vec<_> = legs
            .iter()
            .map(|l| {
                let cfg = BridgeConfig { remote: format!("r{}", l.to), filters: l.filters.clone(), direction: BridgeDirection::Out };
                bridge(&brokers[l.from], &brokers[l.to], &cfg).unwrap()
            })
            .collect();
        let subs: Vec<_> = brokers.iter().map(|b| b.subscribe("#").unwrap()).collect();
        for origin in 0..3 {
            for topic in ["a/x", "a/y", "b/x"] {
                brokers[origin].publish(topic, b"m".to_vec()).unwrap();
                let want = reachable(&legs, origin, topic);
                for (i, s) in subs.iter().enumerate() {
                    let n = s.drain().len();
                    if n != usize::from(want.contains(&i)) {
                        violations += 1;
                    }
                }
            }
        }
    }
    (configs, violations)
}

