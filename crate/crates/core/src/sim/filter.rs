use serde::{Deserialize, Serialize};

use crate::model::Timestamp;

/// Local alert condition of a smart sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Alert {
    Above { threshold: f64 },
    Below { threshold: f64 },
    Outside { low: f64, high: f64 },
}

impl Alert {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Alert::Above { threshold } => v > threshold,
            Alert::Below { threshold } => v < threshold,
            Alert::Outside { low, high } => v < low || v > high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub deadband: f64,
    /// Heartbeat: emit at least this often even when nothing changes.
    pub min_interval_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert: Option<Alert>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitReason {
    First,
    Change,
    Alert,
    Heartbeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitted {
    pub t: Timestamp,
    pub value: f64,
    pub reason: EmitReason,
}

/// Streaming form of [`smart_filter`], one sample at a time.
#[derive(Debug, Clone)]
pub struct SmartFilter {
    policy: FilterPolicy,
    last: Option<(Timestamp, f64)>,
    in_alert: bool,
}

impl SmartFilter {
    pub fn new(policy: FilterPolicy) -> Self {
        Self { policy, last: None, in_alert: false }
    }

    /// Alerts fire when the predicate becomes true, not on every sample
    /// while it stays true.
    pub fn offer(&mut self, t: &Timestamp, v: f64) -> Option<Emitted> {
        let alert = self.policy.alert.is_some_and(|a| a.holds(v));
        let entering_alert = alert && !self.in_alert;
        self.in_alert = alert;
        let reason = match &self.last {
            None => EmitReason::First,
            Some(_) if entering_alert => EmitReason::Alert,
            Some((_, last)) if (v - last).abs() > self.policy.deadband => EmitReason::Change,
            Some((lt, _)) if t.secs_since(lt) >= self.policy.min_interval_secs => EmitReason::Heartbeat,
            Some(_) => return None,
        };
        self.last = Some((t.clone(), v));
        Some(Emitted { t: t.clone(), value: v, reason })
    }
}

/// Messages a smart sensor would send for a time-ordered raw series.
pub fn smart_filter(samples: &[(Timestamp, f64)], policy: &FilterPolicy) -> Vec<Emitted> {
    let mut f = SmartFilter::new(policy.clone());
    samples.iter().filter_map(|(t, v)| f.offer(t, *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: u64, f: impl Fn(u64) -> f64) -> Vec<(Timestamp, f64)> {
        (0..n).map(|i| (Timestamp::from_secs(1_000_000 + i), f(i))).collect()
    }

    #[test]
    fn constant_day_is_heartbeats_only() {
        let policy = FilterPolicy { deadband: 1.0, min_interval_secs: 3600.0, alert: None };
        let out = smart_filter(&series(86_400, |_| 20.0), &policy);
        assert_eq!(out.len(), 24);
        assert!(out[1..].iter().all(|e| e.reason == EmitReason::Heartbeat));
    }

    #[test]
    fn alert_fires_at_the_sample() {
        let policy =
            FilterPolicy { deadband: 100.0, min_interval_secs: 1e9, alert: Some(Alert::Above { threshold: 50.0 }) };
        let out = smart_filter(&series(100, |i| if (40..45).contains(&i) { 60.0 } else { 20.0 }), &policy);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].t, Timestamp::from_secs(1_000_040));
        assert_eq!(out[1].reason, EmitReason::Alert);
    }

    #[test]
    fn step_change() {
        let policy = FilterPolicy { deadband: 0.5, min_interval_secs: 3600.0, alert: None };
        let out = smart_filter(&series(600, |i| if i < 300 { 1.0 } else { 5.0 }), &policy);
        assert_eq!(out.iter().map(|e| e.reason).collect::<Vec<_>>(), [EmitReason::First, EmitReason::Change]);
        assert_eq!(out[1].t, Timestamp::from_secs(1_000_300));
    }
}
