use serde::Serialize;

use super::scenario::TraceRecord;
use super::SimError;
use crate::model::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStats {
    pub stage: String,
    pub n: usize,
    pub mean_ms: f64,
    /// Sample standard deviation (n - 1).
    pub stddev_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub messages: usize,
    pub stages: Vec<StageStats>,
}

impl LatencyReport {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,n,mean_ms,stddev_ms,p50_ms,p99_ms\n");
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{:.3},{:.3}\n",
                s.stage, s.n, s.mean_ms, s.stddev_ms, s.p50_ms, s.p99_ms
            ));
        }
        out
    }
}

type StageFn = fn(&TraceRecord) -> (&Timestamp, &Timestamp);

/// Cumulative latency from emission to each point, then per-hop deltas.
pub const STAGES: [(&str, StageFn); 9] = [
    ("gateway", |r| (&r.t_emit, &r.t_gateway)),
    ("broker", |r| (&r.t_emit, &r.t_broker)),
    ("bus", |r| (&r.t_emit, &r.t_bus)),
    ("client", |r| (&r.t_emit, &r.t_client)),
    ("emit_gateway", |r| (&r.t_emit, &r.t_gateway)),
    ("gateway_broker", |r| (&r.t_gateway, &r.t_broker)),
    ("broker_bus", |r| (&r.t_broker, &r.t_bus)),
    ("bus_client", |r| (&r.t_bus, &r.t_client)),
    ("broker_client", |r| (&r.t_broker, &r.t_client)),
];

fn stage_values(records: &[TraceRecord], f: StageFn) -> Vec<f64> {
    let mut v: Vec<f64> = records
        .iter()
        .map(|r| {
            let (a, b) = f(r);
            b.millis_since(a)
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn latency_report(records: &[TraceRecord]) -> Result<LatencyReport, SimError> {
    if records.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let stages = STAGES
        .iter()
        .map(|(name, f)| {
            let v = stage_values(records, *f);
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            StageStats {
                stage: name.to_string(),
                n,
                mean_ms: mean,
                stddev_ms: var.sqrt(),
                p50_ms: percentile(&v, 50.0),
                p99_ms: percentile(&v, 99.0),
            }
        })
        .collect();
    Ok(LatencyReport { messages: records.len(), stages })
}

/// Empirical CDF of every stage: `stage,value_ms,cumulative_fraction`.
pub fn ecdf_csv(records: &[TraceRecord]) -> Result<String, SimError> {
    if records.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let mut out = String::from("stage,value_ms,cumulative_fraction\n");
    for (name, f) in STAGES {
        let v = stage_values(records, f);
        let n = v.len() as f64;
        for (i, x) in v.iter().enumerate() {
            // one row per distinct value, at its highest rank
            if v.get(i + 1) == Some(x) {
                continue;
            }
            out.push_str(&format!("{name},{x:.6},{:.6}\n", (i + 1) as f64 / n));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(emit_ms: u64, hops: [f64; 4]) -> TraceRecord {
        let t0 = Timestamp::from_micros(1_600_000_000_000_000 + emit_ms * 1000);
        let mut ts = vec![t0.clone()];
        for h in hops {
            let last = ts.last().unwrap().clone();
            ts.push(last.plus_millis_f64(h));
        }
        TraceRecord {
            seq: emit_ms,
            acp_id: "s".into(),
            t_emit: ts[0].clone(),
            t_gateway: ts[1].clone(),
            t_broker: ts[2].clone(),
            t_bus: ts[3].clone(),
            t_client: ts[4].clone(),
            acp_event: None,
        }
    }

    #[test]
    fn stage_arithmetic() {
        let recs: Vec<_> = (0..4).map(|i| rec(i * 10, [10.0 * (i + 1) as f64, 1.0, 2.0, 0.5])).collect();
        let r = latency_report(&recs).unwrap();
        let gw = r.stage("gateway").unwrap();
        assert!((gw.mean_ms - 25.0).abs() < 1e-6);
        // sample stddev of 10,20,30,40
        assert!((gw.stddev_ms - 12.909944).abs() < 1e-5);
        assert_eq!(gw.p50_ms, 20.0);
        assert_eq!(gw.p99_ms, 40.0);
        assert!((r.stage("client").unwrap().mean_ms - 28.5).abs() < 1e-6);
        assert!((r.stage("broker_client").unwrap().mean_ms - 2.5).abs() < 1e-6);
        assert!(matches!(latency_report(&[]), Err(SimError::EmptyTrace)));
    }

    #[test]
    fn ecdf_rows() {
        let recs: Vec<_> = (0..4).map(|i| rec(i, [i as f64, 0.0, 0.0, 0.0])).collect();
        let csv = ecdf_csv(&recs).unwrap();
        let gw: Vec<&str> = csv.lines().filter(|l| l.starts_with("gateway,")).collect();
        assert_eq!(gw, ["gateway,0.000000,0.250000", "gateway,1.000000,0.500000", "gateway,2.000000,0.750000", "gateway,3.000000,1.000000"]);
        assert!(csv.lines().any(|l| l == "bus_client,0.000000,1.000000"));
    }
}
