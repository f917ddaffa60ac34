//! Deterministic sensor-fleet simulation: periodic and smart sensors, the
//! coffee-pot node, scripted scenarios and per-stage latency reporting.

mod coffee;
mod filter;
mod report;
mod scenario;

use thiserror::Error;

pub use coffee::{coffee_step, CoffeeConfig, CoffeeEvent, CoffeeInputs, CoffeeState, Phase};
pub use filter::{smart_filter, Alert, EmitReason, Emitted, FilterPolicy, SmartFilter};
pub use report::{ecdf_csv, latency_report, percentile, LatencyReport, StageStats, STAGES};
pub use scenario::{
    brew_day_config, match_events, run_scenario, Action, ClockMode, Emission, GroundTruth, LatencyModel,
    MatchStats, RunOptions, ScenarioConfig, ScenarioTrace, ScriptEntry, SensorSpec, TraceRecord, ValueModel,
    DEFAULT_START_SECS, GATEWAY_STAGE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("io: {0}")]
    Io(String),
    #[error("platform: {0}")]
    Platform(String),
}
