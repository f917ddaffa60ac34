use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Datelike};

use super::{Context, Input, Verticle};
use crate::model::{Envelope, Timestamp};

const OPEN_FILE_LIMIT: usize = 64;

fn utc_date(ts: &Timestamp) -> (i32, u32, u32) {
    let secs = i64::try_from(ts.seconds()).unwrap_or(i64::MAX);
    let dt = DateTime::from_timestamp(secs, 0).unwrap_or_default();
    (dt.year(), dt.month(), dt.day())
}

/// Keeps ids usable as a single path component.
fn safe_component(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        format!("_{s}")
    } else {
        s
    }
}

/// `<root>/data/YYYY/MM/DD.ndjson` for the UTC day of `ts`.
pub fn day_shard_path(root: &Path, ts: &Timestamp) -> PathBuf {
    let (y, m, d) = utc_date(ts);
    root.join("data").join(format!("{y:04}")).join(format!("{m:02}")).join(format!("{d:02}.ndjson"))
}

/// `<root>/sensors/<acp_id>/YYYY-MM-DD.ndjson` for the UTC day of `ts`.
pub fn sensor_shard_path(root: &Path, acp_id: &str, ts: &Timestamp) -> PathBuf {
    let (y, m, d) = utc_date(ts);
    root.join("sensors").join(safe_component(acp_id)).join(format!("{y:04}-{m:02}-{d:02}.ndjson"))
}

#[derive(Debug, Default)]
pub struct FilerCounters {
    pub written: AtomicU64,
    /// Failed writes (disk full, permissions). Never back-pressures the bus.
    pub errors: AtomicU64,
}

/// Storage verticle: appends every envelope to its day shard and to its
/// sensor's day shard.
pub struct MessageFiler {
    root: PathBuf,
    open: HashMap<PathBuf, File>,
    counters: Arc<FilerCounters>,
}

impl MessageFiler {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), open: HashMap::new(), counters: Arc::new(FilerCounters::default()) }
    }

    pub fn counters(&self) -> Arc<FilerCounters> {
        self.counters.clone()
    }

    fn append(&mut self, path: PathBuf, line: &str) -> std::io::Result<()> {
        if !self.open.contains_key(&path) {
            if self.open.len() >= OPEN_FILE_LIMIT {
                self.open.clear();
            }
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let f = OpenOptions::new().create(true).append(true).open(&path)?;
            self.open.insert(path.clone(), f);
        }
        let f = self.open.get_mut(&path).unwrap();
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")
    }

    pub fn file(&mut self, env: &Envelope) -> std::io::Result<()> {
        let line = env.to_json_string();
        self.append(day_shard_path(&self.root, env.acp_ts()), &line)?;
        self.append(sensor_shard_path(&self.root, env.acp_id(), env.acp_ts()), &line)
    }
}

impl Verticle for MessageFiler {
    fn handle(&mut self, input: Input<'_>, ctx: &mut Context<'_>) {
        let Input::Bus(ev) = input else { return };
        let Some(env) = ev.body.envelope() else { return };
        match self.file(env) {
            Ok(()) => {
                self.counters.written.fetch_add(1, Ordering::Relaxed);
            }
            Err(_) => {
                self.counters.errors.fetch_add(1, Ordering::Relaxed);
                ctx.error();
            }
        }
    }
}

/// Reads every envelope under `dir` (recursively, `*.ndjson`), in path
/// order then line order. Unparseable lines are skipped and counted.
pub fn read_shards(dir: &Path) -> std::io::Result<(Vec<Envelope>, usize)> {
    let mut files = Vec::new();
    collect_ndjson(dir, &mut files)?;
    files.sort();
    let mut out = Vec::new();
    let mut bad = 0;
    for f in files {
        for line in BufReader::new(File::open(&f)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).ok().and_then(|v| Envelope::from_json(&v).ok()) {
                Some(e) => out.push(e),
                None => bad += 1,
            }
        }
    }
    Ok((out, bad))
}

fn collect_ndjson(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_ndjson(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "ndjson") {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn env(id: &str, ts: &str) -> Envelope {
        Envelope::builder(id, Timestamp::parse(ts).unwrap(), "t", json!({"v": 1}).as_object().unwrap().clone())
            .build()
            .unwrap()
    }

    #[test]
    fn shard_paths_split_at_utc_midnight() {
        let root = Path::new("/r");
        // 2020-05-14T23:59:59.9Z and 2020-05-15T00:00:00.1Z
        let a = Timestamp::parse("1589500799.9").unwrap();
        let b = Timestamp::parse("1589500800.1").unwrap();
        assert_eq!(day_shard_path(root, &a), Path::new("/r/data/2020/05/14.ndjson"));
        assert_eq!(day_shard_path(root, &b), Path::new("/r/data/2020/05/15.ndjson"));
        assert_eq!(sensor_shard_path(root, "s1", &a), Path::new("/r/sensors/s1/2020-05-14.ndjson"));
        assert_eq!(sensor_shard_path(root, "../x", &a), Path::new("/r/sensors/.._x/2020-05-14.ndjson"));
    }

    #[test]
    fn both_shards_hold_the_envelope() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = MessageFiler::new(dir.path());
        f.file(&env("s1", "1589469979.861816")).unwrap();
        f.file(&env("s2", "1589469980")).unwrap();
        drop(f);
        let (days, bad) = read_shards(&dir.path().join("data")).unwrap();
        let (sensors, _) = read_shards(&dir.path().join("sensors")).unwrap();
        assert_eq!(bad, 0);
        assert_eq!(days.len(), 2);
        let key = |v: &Vec<Envelope>| {
            let mut k: Vec<String> = v.iter().map(|e| e.to_json_string()).collect();
            k.sort();
            k
        };
        assert_eq!(key(&days), key(&sensors));
    }
}
