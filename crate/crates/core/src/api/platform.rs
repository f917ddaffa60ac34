use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Api, LatestReadings, LatestVerticle, DEFAULT_PX_PER_METRE, METADATA_JOURNAL};
use crate::broker::{BridgeConfig, BridgeHandle, Broker, BrokerRegistry};
use crate::cep::{
    parse_rules, places_from_store, CepEngine, CepPipeline, CepVerticle, EngineConfig, StatisticalDetector,
    VicinityConfig, DEFAULT_FLOOR_HEIGHT, DEFAULT_OMEGA_SECS,
};
use crate::decode::DecoderManager;
use crate::metadata::{demo_site, MetadataStore, SharedStore};
use crate::model::{Clock, SystemClock, Timestamp};
use crate::privacy::load_permissions;
use crate::rts::{
    FeedCounters, FeedHandler, MessageFiler, RtMonitor, RtMonitorHandle, Rts, RtsMode, VerticleClass, VerticleSpec,
    DEFAULT_SUBSCRIPTION_CAP, FEED_ADDRESS,
};

const BROKER_QUEUE_DEPTH: usize = 1 << 16;

fn default_brokers() -> Vec<String> {
    vec!["local".into()]
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

/// Deployment description for `serve`. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    /// Broker ids; sensors publish into the first.
    #[serde(default = "default_brokers")]
    pub brokers: Vec<String>,
    /// Bridges per local broker id.
    #[serde(default)]
    pub bridges: BTreeMap<String, Vec<BridgeConfig>>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Metadata journal. Created from the demo site when missing. Defaults
    /// to the journal inside `data_dir`; with neither, metadata is in memory.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
    #[serde(default)]
    pub permissions_file: Option<PathBuf>,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub px_per_metre: Option<f64>,
    #[serde(default)]
    pub omega_secs: Option<f64>,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl PlatformConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.metadata, &mut cfg.rules_file, &mut cfg.permissions_file]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// One message for the ingest broker: `{"topic": .., "payload": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestLine {
    pub topic: String,
    pub payload: Value,
}

/// Brokers, bridges, decoders, real-time server, CEP and the query API,
/// wired together and running on their own threads.
pub struct Platform {
    registry: BrokerRegistry,
    _bridges: Vec<BridgeHandle>,
    ingest: Broker,
    rts: Arc<Rts>,
    monitor: RtMonitorHandle,
    feed: Arc<FeedCounters>,
    api: Api,
    config: PlatformConfig,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Platform {
    pub fn start(config: PlatformConfig) -> Result<Self, String> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        if config.brokers.is_empty() {
            return Err("at least one broker is required".into());
        }
        let mut registry = BrokerRegistry::new();
        for id in &config.brokers {
            registry.add(Broker::with_options(id, BROKER_QUEUE_DEPTH, clock.clone()));
        }
        let mut bridges = Vec::new();
        for (local, cfgs) in &config.bridges {
            bridges.extend(registry.apply_bridges(local, cfgs).map_err(err)?);
        }
        let ingest = registry.get(&config.brokers[0]).map_err(err)?.clone();

        let journal = config.metadata.clone().or_else(|| config.data_dir.as_ref().map(|d| d.join(METADATA_JOURNAL)));
        let mut store = match &journal {
            Some(p) if p.exists() => MetadataStore::load(p).map_err(err)?,
            _ => demo_site(),
        };
        if let Some(p) = &config.permissions_file {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            load_permissions(&mut store, &text, &clock.now()).map_err(err)?;
        }
        let rules = match &config.rules_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                parse_rules(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => Vec::new(),
        };
        let places = places_from_store(&store, DEFAULT_FLOOR_HEIGHT);
        let shared = match &journal {
            Some(p) => {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent).map_err(err)?;
                }
                // Rewritten whole so permissions loaded above are journaled too.
                store.export_journal(File::create(p).map_err(err)?).map_err(err)?;
                SharedStore::new(store).with_journal(p).map_err(err)?
            }
            None => SharedStore::new(store),
        };
        let shared = Arc::new(shared);

        let rts = Arc::new(Rts::new(RtsMode::Threaded, clock));
        let feed = FeedHandler::new(Arc::new(DecoderManager::with_builtin()));
        let counters = feed.counters();
        let sub = ingest.subscribe("#").map_err(err)?;
        rts.deploy(VerticleSpec::on_broker("feed", VerticleClass::Ingestion, sub, feed)).map_err(err)?;
        let (monitor, handle) = RtMonitor::new(DEFAULT_SUBSCRIPTION_CAP);
        rts.deploy(VerticleSpec::on_bus("rtmonitor", VerticleClass::Outbound, &[FEED_ADDRESS], monitor)).map_err(err)?;
        if let Some(dir) = &config.data_dir {
            rts.deploy(VerticleSpec::on_bus("filer", VerticleClass::Storage, &[FEED_ADDRESS], MessageFiler::new(dir)))
                .map_err(err)?;
        }
        let latest = match &config.data_dir {
            Some(dir) => LatestReadings::from_shards(dir).map_err(err)?.0,
            None => LatestReadings::new(),
        };
        rts.deploy(VerticleSpec::on_bus("latest", VerticleClass::Storage, &[FEED_ADDRESS], LatestVerticle::new(latest.clone())))
            .map_err(err)?;
        let vicinity = VicinityConfig { omega_secs: config.omega_secs.unwrap_or(DEFAULT_OMEGA_SECS), ..Default::default() };
        vicinity.validate()?;
        let pipeline = CepPipeline::new(
            vicinity,
            Box::new(StatisticalDetector::default()),
            CepEngine::new(EngineConfig::default(), rules, places),
        );
        rts.deploy(VerticleSpec::on_bus("cep", VerticleClass::Analysis, &[FEED_ADDRESS], CepVerticle::new(pipeline)))
            .map_err(err)?;

        let stats_rts = rts.clone();
        let stats_feed = counters.clone();
        let stats_brokers: Vec<Broker> =
            config.brokers.iter().map(|id| registry.get(id).expect("registered above").clone()).collect();
        let api = Api::new(shared, latest, config.data_dir.clone())
            .with_scale(config.px_per_metre.unwrap_or(DEFAULT_PX_PER_METRE))
            .with_stats(move || {
                let (received, fed, deadlettered) = stats_feed.get();
                let brokers: serde_json::Map<String, Value> = stats_brokers
                    .iter()
                    .map(|b| (b.id().0.clone(), serde_json::to_value(b.stats()).expect("stats serialise")))
                    .collect();
                json!({
                    "feed": {"received": received, "fed": fed, "deadlettered": deadlettered},
                    "brokers": brokers,
                    "verticles": stats_rts.stats(),
                })
            });
        Ok(Self { registry, _bridges: bridges, ingest, rts, monitor: handle, feed: counters, api, config })
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn api(&self) -> &Api {
        &self.api
    }

    pub fn monitor(&self) -> &RtMonitorHandle {
        &self.monitor
    }

    pub fn broker(&self, id: &str) -> Option<&Broker> {
        self.registry.get(id).ok()
    }

    /// (received, fed, deadlettered) at the ingest handler.
    pub fn feed_counters(&self) -> (u64, u64, u64) {
        self.feed.get()
    }

    pub fn ingest(&self, line: &IngestLine) -> Result<(), String> {
        let bytes = serde_json::to_vec(&line.payload).map_err(err)?;
        self.ingest.publish(&line.topic, bytes).map(|_| ()).map_err(err)
    }

    /// Publishes each NDJSON line; returns (published, rejected).
    pub fn ingest_ndjson(&self, r: impl BufRead) -> std::io::Result<(usize, usize)> {
        let (mut ok, mut bad) = (0, 0);
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<IngestLine>(&line).map_err(err).and_then(|l| self.ingest(&l)) {
                Ok(()) => ok += 1,
                Err(_) => bad += 1,
            }
        }
        Ok((ok, bad))
    }

    pub fn wait_idle(&self, timeout: Duration) -> bool {
        self.rts.wait_idle(timeout)
    }

    pub fn now(&self) -> Timestamp {
        self.rts.bus().clock().now()
    }

    pub fn shutdown(&self) {
        self.rts.shutdown();
    }
}
