//! Deterministic discrete-event simulator for a four-level disaster
//! management communication chain.
//!
//! Information flows upward through four tiers: sensor fields aggregate
//! detections at small data collection centers (level one); mobile agent
//! ferries and direct radio links carry reports to data processing centers
//! (level two); processing centers score report confidence and merge
//! corroborating observations (level three); the central data center
//! decides warnings against its reference archives and the disaster
//! control center pushes them to subscribers (level four).
//!
//! The crate is organized the same way:
//! - [`model`]: shared vocabulary (time, geometry, hazards, reports)
//! - [`engine`]: event queue and seeded random streams
//! - [`level_one`] .. [`level_four`]: per-tier mechanics, all pure
//! - [`scenario`]: the versioned JSON input format and deployment rules
//! - [`sim`]: the orchestrator that wires the tiers to the clock
//! - [`trace`] and [`metrics`]: run outputs
//!
//! Determinism is a hard guarantee: a (scenario, seed) pair produces
//! byte-identical traces and metrics on every run and platform.

pub mod engine;
pub mod level_four;
pub mod level_one;
pub mod level_three;
pub mod level_two;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use metrics::{compute_metrics, MetricsReport, METRICS_SCHEMA_TAG};
pub use model::{
    ActorId, AreaId, CdcId, DpcId, HazardEvent, HazardField, HazardKind, MapId, Modality,
    Position, Rect, Report, ReportId, ReportKind, ReportPayload, SdccId, SensorId, Severity,
    SeverityCuts, SeverityTable, SimTime, Violation, WarningChannel,
};
pub use scenario::{
    emit_scenario, generate, parse_scenario, parse_scenario_value, validate_scenario, Scenario,
    ScenarioError, SCHEMA_TAG,
};
pub use sim::{run_scenario, FinalState, RunConfig, RunOutcome, SimError};
pub use trace::{read_jsonl, TraceError, TraceEvent, TraceKind, TraceLog};
