//! Complex event processing: feature extraction, atomic detection and
//! rule-based composition of atomic events into complex ones.

mod engine;
mod features;
mod rule;
mod stats;

pub use engine::{
    constraint_holds, AtomicEvent, CepEngine, ComplexEvent, EngineConfig, Fact, FactWindow, SensorPlace,
    SensorPlaces, DEFAULT_BINDING_CAP, DEFAULT_CASCADE_DEPTH, DEFAULT_WINDOW,
};
pub use features::{
    places_from_store, CepPipeline, CepVerticle, CorrelationVector, Detector, FeatureState, FeatureVector,
    PipelineOutput, StatisticalDetector, Vicinity, VicinityConfig, ATOMIC_ADDRESS, COMPLEX_ADDRESS,
    DEFAULT_C_MIN, DEFAULT_FLOOR_HEIGHT, DEFAULT_OMEGA_SECS, DEFAULT_THETA,
};
pub use rule::{parse_rule, parse_rules, CmpOp, Constraint, Rule, SyntaxError, Term};
pub use stats::{
    divergence_score, mean, pearson, std_dev, temporal_params, Correlation, StatsError, DIVERGENCE_EPSILON,
    MIN_BASELINE, MIN_WINDOW,
};
