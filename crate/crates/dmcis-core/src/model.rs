//! Shared domain vocabulary: time, geometry, hazard fields and reports.
//!
//! Everything downstream (sensing, ferrying, processing, warning) speaks in
//! these types. They carry no behaviour beyond small pure helpers so they can
//! be serialized into scenarios and traces unchanged.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

// ============================================================================
// Time
// ============================================================================

/// Simulation clock value in seconds from run start.
///
/// Wraps an `f64` but provides a total order so it can key the event queue.
/// Times are always finite and non-negative in a running simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn seconds(self) -> f64 {
        self.0
    }

    pub fn offset(self, secs: f64) -> SimTime {
        SimTime(self.0 + secs)
    }
}

impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<f64> for SimTime {
    fn from(v: f64) -> Self {
        SimTime(v)
    }
}

// ============================================================================
// Geometry
// ============================================================================

/// Planar coordinate in meters. Serializes as a compact `[x, y]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }
}

impl From<(f64, f64)> for Position {
    fn from((x, y): (f64, f64)) -> Self {
        Position { x, y }
    }
}

impl From<Position> for (f64, f64) {
    fn from(p: Position) -> Self {
        (p.x, p.y)
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Position, b: Position) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// Axis-aligned bounding box for the deployment region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

// ============================================================================
// Identifiers
// ============================================================================

pub type SensorId = u32;
pub type SdccId = u32;
pub type ClusterId = u32;
pub type MapId = u32;
pub type DpcId = u32;
pub type CdcId = u32;
pub type ReportId = u64;
/// Areas are named, not numbered; names come from the scenario file.
pub type AreaId = String;

/// Any addressable actor in the system, used in traces and provenance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActorId {
    Sensor(SensorId),
    Sdcc(SdccId),
    Map(MapId),
    Dpc(DpcId),
    Cdc(CdcId),
    Dcc,
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorId::Sensor(id) => write!(f, "sensor:{id}"),
            ActorId::Sdcc(id) => write!(f, "sdcc:{id}"),
            ActorId::Map(id) => write!(f, "map:{id}"),
            ActorId::Dpc(id) => write!(f, "dpc:{id}"),
            ActorId::Cdc(id) => write!(f, "cdc:{id}"),
            ActorId::Dcc => write!(f, "dcc"),
        }
    }
}

impl std::str::FromStr for ActorId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "dcc" {
            return Ok(ActorId::Dcc);
        }
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| format!("malformed actor id {s:?}"))?;
        let id: u32 = id.parse().map_err(|_| format!("bad actor index in {s:?}"))?;
        match kind {
            "sensor" => Ok(ActorId::Sensor(id)),
            "sdcc" => Ok(ActorId::Sdcc(id)),
            "map" => Ok(ActorId::Map(id)),
            "dpc" => Ok(ActorId::Dpc(id)),
            "cdc" => Ok(ActorId::Cdc(id)),
            other => Err(format!("unknown actor kind {other:?}")),
        }
    }
}

impl Serialize for ActorId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActorId {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ============================================================================
// Hazards
// ============================================================================

/// What the environment can do to the region.
///
/// `FalseSpike` is a short local disturbance (a passing ship wake, machinery)
/// that excites sensors but is never worth a public warning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    Flood,
    Cyclone,
    Tsunami,
    Earthquake,
    Landslide,
    FalseSpike,
}

impl fmt::Display for HazardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HazardKind::Flood => "flood",
            HazardKind::Cyclone => "cyclone",
            HazardKind::Tsunami => "tsunami",
            HazardKind::Earthquake => "earthquake",
            HazardKind::Landslide => "landslide",
            HazardKind::FalseSpike => "false_spike",
        };
        f.write_str(s)
    }
}

/// Graded response class, ordered from least to most urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Routine,
    Urgent,
    Emergency,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Severity::Routine => "routine",
            Severity::Urgent => "urgent",
            Severity::Emergency => "emergency",
        };
        f.write_str(s)
    }
}

/// One scripted environmental event.
///
/// Intensity at distance `d` from the epicenter while active is
/// `peak_intensity * max(0, 1 - d / radius)`, a linear cone that fades with
/// distance. `ground_truth_warnable` is scoring metadata only; no actor may
/// read it to make a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardEvent {
    pub id: String,
    pub kind: HazardKind,
    pub epicenter: Position,
    pub radius: f64,
    pub onset: SimTime,
    pub duration: f64,
    pub peak_intensity: f64,
    pub severity: Severity,
    pub ground_truth_warnable: bool,
}

impl HazardEvent {
    pub fn active_at(&self, t: SimTime) -> bool {
        t >= self.onset && t.seconds() < self.onset.seconds() + self.duration
    }

    /// Contribution of this event alone at point `p` and time `t`.
    pub fn intensity_at(&self, p: Position, t: SimTime) -> f64 {
        if !self.active_at(t) {
            return 0.0;
        }
        let d = distance(p, self.epicenter);
        self.peak_intensity * (1.0 - d / self.radius).max(0.0)
    }
}

/// The whole scripted environment for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardField {
    #[serde(default)]
    pub events: Vec<HazardEvent>,
    /// Standard deviation of additive Gaussian sensor noise. Zero keeps
    /// sampled values fully deterministic regardless of the seed.
    #[serde(default)]
    pub background_noise_sigma: f64,
}

impl HazardField {
    /// True intensity at a point, plus noise scaled by a standard normal
    /// draw supplied by the caller. Clamped at zero: sensors cannot read
    /// negative intensity.
    pub fn hazard_value(&self, p: Position, t: SimTime, rng_draw: f64) -> f64 {
        let base: f64 = self.events.iter().map(|e| e.intensity_at(p, t)).sum();
        (base + self.background_noise_sigma * rng_draw).max(0.0)
    }

    /// Id of the active event contributing the most intensity at `p`, used
    /// to attribute detections to ground truth when scoring. Ties resolve
    /// to the earliest event in scenario order.
    pub fn dominant_event(&self, p: Position, t: SimTime) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for e in &self.events {
            let v = e.intensity_at(p, t);
            if v <= 0.0 {
                continue;
            }
            match best {
                Some((_, bv)) if bv >= v => {}
                _ => best = Some((e.id.as_str(), v)),
            }
        }
        best.map(|(id, _)| id)
    }
}

// ============================================================================
// Severity grading
// ============================================================================

/// Per-kind intensity cut points `[routine_below, emergency_at]`.
///
/// Intensity below the first cut is routine, at or above the second is an
/// emergency, in between is urgent. Cuts of `[0, 0]` make every detection an
/// emergency, which is the default for kinds with no useful early gradation
/// (earthquakes, landslides).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityCuts(pub f64, pub f64);

impl SeverityCuts {
    pub const ALWAYS_EMERGENCY: SeverityCuts = SeverityCuts(0.0, 0.0);

    pub fn default_for(kind: HazardKind) -> SeverityCuts {
        match kind {
            HazardKind::Earthquake | HazardKind::Landslide => SeverityCuts::ALWAYS_EMERGENCY,
            _ => SeverityCuts(1.0, 5.0),
        }
    }
}

/// Grade an estimated intensity for a hypothesized hazard kind.
pub fn severity_of(intensity: f64, cuts: SeverityCuts) -> Severity {
    if intensity >= cuts.1 {
        Severity::Emergency
    } else if intensity >= cuts.0 {
        Severity::Urgent
    } else {
        Severity::Routine
    }
}

/// Scenario-level severity grading: explicit cut points per kind, falling
/// back to the built-in defaults for kinds left unspecified.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeverityTable(pub std::collections::BTreeMap<HazardKind, SeverityCuts>);

impl SeverityTable {
    pub fn cuts_for(&self, kind: HazardKind) -> SeverityCuts {
        self.0.get(&kind).copied().unwrap_or_else(|| SeverityCuts::default_for(kind))
    }

    pub fn grade(&self, kind: HazardKind, intensity: f64) -> Severity {
        severity_of(intensity, self.cuts_for(kind))
    }
}

// ============================================================================
// Sensing modalities
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Acoustic,
    Seismic,
    Visual,
    Pressure,
    WaterLevel,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Acoustic => "acoustic",
            Modality::Seismic => "seismic",
            Modality::Visual => "visual",
            Modality::Pressure => "pressure",
            Modality::WaterLevel => "water_level",
        };
        f.write_str(s)
    }
}

/// One structural problem found while validating a scenario. `code` is a
/// stable machine-readable slug; `message` names the offending entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Violation { code: code.to_owned(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

/// Outbound channel a public warning can ride on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningChannel {
    Sms,
    InternetMessaging,
}

impl fmt::Display for WarningChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WarningChannel::Sms => f.write_str("sms"),
            WarningChannel::InternetMessaging => f.write_str("internet_messaging"),
        }
    }
}

// ============================================================================
// Reports
// ============================================================================

/// Lifecycle stage of a report. Aggregation output starts at
/// `PartiallyProcessed`; a DPC promotes it to `Processed`. The raw stage
/// never moves backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Raw,
    PartiallyProcessed,
    Processed,
    ManualRecord,
    WarningRequest,
    EmergencyCall,
}

/// Summary payload produced by aggregation and refined during processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPayload {
    /// Distinct sensors that contributed a detection.
    pub sensor_ids: BTreeSet<SensorId>,
    pub modalities: BTreeSet<Modality>,
    /// Highest intensity observed in the aggregation window.
    pub intensity: f64,
    /// Centroid of the contributing sensors.
    pub epicenter_estimate: Option<Position>,
    /// What kind of hazard the reporting area watches for.
    pub kind_hypothesis: HazardKind,
    /// Set when a DPC gave up on raising confidence and forwarded anyway.
    #[serde(default)]
    pub low_confidence: bool,
    /// Scoring linkage to scripted events; not visible to decision logic.
    #[serde(default)]
    pub hazard_ids: BTreeSet<String>,
}

impl ReportPayload {
    /// Number of distinct contributing sensors.
    pub fn k(&self) -> usize {
        self.sensor_ids.len()
    }
}

/// One unit of information moving through the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub id: ReportId,
    pub kind: ReportKind,
    pub origin_area: AreaId,
    pub created_at: SimTime,
    pub size_bytes: u64,
    pub severity: Severity,
    pub payload: ReportPayload,
    /// Hops taken so far, in time order.
    pub provenance: Vec<(ActorId, SimTime)>,
    /// Assigned during processing, absent before.
    pub confidence: Option<f64>,
}

impl Report {
    pub fn origin_sdcc(&self) -> Option<SdccId> {
        match self.provenance.first() {
            Some((ActorId::Sdcc(id), _)) => Some(*id),
            _ => None,
        }
    }
}

// ============================================================================
// Tests
// ============================================================================
