//! Sensing tier: sensor nodes, clusters and the small data collection
//! centers (SDCCs) that aggregate detections into reports.
//!
//! An SDCC only believes a hazard once at least `tau` distinct live sensors
//! have reported it inside the sliding window. That single knob trades
//! sensitivity against false alarms from short local disturbances.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimRng;
use crate::model::{
    distance, AreaId, ClusterId, HazardField, HazardKind, Modality, Position, Report, ReportId,
    ReportKind, ReportPayload, SdccId, SensorId, SeverityTable, SimTime,
};
use crate::model::ActorId;

#[derive(Debug, Error, PartialEq)]
pub enum LevelOneError {
    #[error("sdcc {sdcc} has no assigned sensors")]
    EmptyDeployment { sdcc: SdccId },
    #[error("expected a {expected:?} report, got {got:?}")]
    KindMismatch { expected: ReportKind, got: ReportKind },
}

// ============================================================================
// Nodes
// ============================================================================

/// One deployed sensor. Runtime state; built from the scenario at load.
#[derive(Debug, Clone)]
pub struct SensorNode {
    pub id: SensorId,
    pub position: Position,
    pub modality: Modality,
    /// Intensity at or above this triggers a detection.
    pub detect_threshold: f64,
    /// Seconds between samples.
    pub sample_period: f64,
    pub alive: bool,
    pub cluster: Option<ClusterId>,
    pub home_sdcc: SdccId,
    /// Private noise stream; derived from the master seed and this id.
    pub rng: SimRng,
}

/// Sensors grouped around a head that relays to the SDCC.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: ClusterId,
    pub sdcc: SdccId,
    pub head: SensorId,
    /// All members including the head, ordered by (distance to SDCC, id).
    pub members: Vec<SensorId>,
    /// One-leg relay delay; member to SDCC costs twice this.
    pub hop_delay: f64,
}

/// A single over-threshold sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub sensor: SensorId,
    /// Sample instant (not arrival at the SDCC).
    pub at: SimTime,
    pub value: f64,
    pub modality: Modality,
    /// Scoring linkage: scripted event that dominated this sample, if any.
    #[serde(default)]
    pub hazard: Option<String>,
}

/// Small data collection center for one sensor field.
#[derive(Debug, Clone)]
pub struct Sdcc {
    pub id: SdccId,
    pub area: AreaId,
    pub position: Position,
    /// Distinct-sensor threshold for emitting a report.
    pub tau: u32,
    /// Sliding window length in seconds.
    pub window: f64,
    /// Quiet period after an emitted report.
    pub refractory: f64,
    /// Detections that have arrived, newest kept, pruned on aggregation.
    pub detections: Vec<Detection>,
    pub last_emitted_at: Option<SimTime>,
    /// Reports awaiting shipment (ferry pickup or direct link), FIFO.
    pub outbox: VecDeque<ReportId>,
}

impl Sdcc {
    pub fn actor(&self) -> ActorId {
        ActorId::Sdcc(self.id)
    }
}

// ============================================================================
// Cluster formation
// ============================================================================

/// Group every sensor around its home SDCC into clusters of at most
/// `k_per_cluster`, nearest sensors first. The member closest to the SDCC
/// heads each cluster (ties to the smaller id). Cluster ids are assigned in
/// SDCC order, so formation is deterministic.
pub fn form_clusters(
    sensors: &mut BTreeMap<SensorId, SensorNode>,
    sdcc_positions: &BTreeMap<SdccId, Position>,
    k_per_cluster: usize,
    hop_delay: f64,
) -> Result<BTreeMap<ClusterId, Cluster>, LevelOneError> {
    assert!(k_per_cluster >= 1, "cluster size must be positive");

    let mut by_sdcc: BTreeMap<SdccId, Vec<SensorId>> = BTreeMap::new();
    for (id, s) in sensors.iter() {
        by_sdcc.entry(s.home_sdcc).or_default().push(*id);
    }
    for sdcc in sdcc_positions.keys() {
        if !by_sdcc.contains_key(sdcc) {
            return Err(LevelOneError::EmptyDeployment { sdcc: *sdcc });
        }
    }

    let mut clusters = BTreeMap::new();
    let mut next_id: ClusterId = 1;
    for (sdcc, mut ids) in by_sdcc {
        let origin = sdcc_positions[&sdcc];
        ids.sort_by(|a, b| {
            let da = distance(sensors[a].position, origin);
            let db = distance(sensors[b].position, origin);
            da.total_cmp(&db).then(a.cmp(b))
        });
        for chunk in ids.chunks(k_per_cluster) {
            let cluster = Cluster {
                id: next_id,
                sdcc,
                head: chunk[0],
                members: chunk.to_vec(),
                hop_delay,
            };
            for m in chunk {
                sensors.get_mut(m).unwrap().cluster = Some(next_id);
            }
            clusters.insert(next_id, cluster);
            next_id += 1;
        }
    }
    Ok(clusters)
}

/// Drop a failed member and, if it was the head, promote the remaining
/// member closest to the SDCC (ties to the smaller id). Returns `false`
/// when the cluster has no members left and should be dissolved.
pub fn reelect_head(
    cluster: &mut Cluster,
    failed: SensorId,
    sensors: &BTreeMap<SensorId, SensorNode>,
    sdcc_position: Position,
) -> bool {
    cluster.members.retain(|m| *m != failed);
    if cluster.members.is_empty() {
        return false;
    }
    if cluster.head == failed {
        let new_head = cluster
            .members
            .iter()
            .copied()
            .min_by(|a, b| {
                let da = distance(sensors[a].position, sdcc_position);
                let db = distance(sensors[b].position, sdcc_position);
                da.total_cmp(&db).then(a.cmp(b))
            })
            .unwrap();
        cluster.head = new_head;
    }
    true
}

// ============================================================================
// Sampling and aggregation
// ============================================================================

/// Take one sample. `draw` is a standard normal variate from the sensor's
/// own stream; with zero background noise it has no effect. A detection
/// fires when the value reaches the threshold (inclusive).
pub fn sample(sensor: &SensorNode, field: &HazardField, t: SimTime, draw: f64) -> Option<Detection> {
    if !sensor.alive {
        return None;
    }
    let value = field.hazard_value(sensor.position, t, draw);
    if value >= sensor.detect_threshold {
        Some(Detection {
            sensor: sensor.id,
            at: t,
            value,
            modality: sensor.modality,
            hazard: field.dominant_event(sensor.position, t).map(str::to_owned),
        })
    } else {
        None
    }
}

/// Everything aggregation needs besides the SDCC itself.
pub struct AggregateCtx<'a> {
    pub sensors: &'a BTreeMap<SensorId, SensorNode>,
    /// Hazard kind this area watches for; becomes the report hypothesis.
    pub kind_hint: HazardKind,
    pub severity: &'a SeverityTable,
    pub now: SimTime,
    /// Id to assign if a report is emitted.
    pub report_id: ReportId,
    pub report_size_bytes: u64,
}

/// Close the current window: count distinct live sensors with a detection
/// inside `(now - window, now]` and emit one report when the count reaches
/// `tau` and the refractory period from the previous report has elapsed.
///
/// The detection buffer is pruned but not cleared on emission; suppression
/// of immediate repeats is the refractory's job.
pub fn sdcc_aggregate(sdcc: &mut Sdcc, ctx: &AggregateCtx<'_>) -> Option<Report> {
    let now = ctx.now;
    let lo = now.seconds() - sdcc.window;
    sdcc.detections.retain(|d| d.at.seconds() > lo && d.at <= now);

    let mut contributing: BTreeMap<SensorId, &Detection> = BTreeMap::new();
    for d in &sdcc.detections {
        let alive = ctx.sensors.get(&d.sensor).map(|s| s.alive).unwrap_or(false);
        if !alive {
            continue;
        }
        let best = contributing.entry(d.sensor).or_insert(d);
        if d.value > best.value {
            *best = d;
        }
    }

    if (contributing.len() as u32) < sdcc.tau {
        return None;
    }
    if let Some(prev) = sdcc.last_emitted_at {
        if now.seconds() < prev.seconds() + sdcc.refractory {
            return None;
        }
    }

    let sensor_ids: BTreeSet<SensorId> = contributing.keys().copied().collect();
    let modalities: BTreeSet<Modality> = contributing.values().map(|d| d.modality).collect();
    let intensity = contributing
        .values()
        .map(|d| d.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let hazard_ids: BTreeSet<String> = contributing
        .values()
        .filter_map(|d| d.hazard.clone())
        .collect();
    let centroid = {
        let n = sensor_ids.len() as f64;
        let (sx, sy) = sensor_ids.iter().fold((0.0, 0.0), |(sx, sy), id| {
            let p = ctx.sensors[id].position;
            (sx + p.x, sy + p.y)
        });
        Position::new(sx / n, sy / n)
    };

    sdcc.last_emitted_at = Some(now);
    Some(Report {
        id: ctx.report_id,
        kind: ReportKind::PartiallyProcessed,
        origin_area: sdcc.area.clone(),
        created_at: now,
        size_bytes: ctx.report_size_bytes,
        severity: ctx.severity.grade(ctx.kind_hint, intensity),
        payload: ReportPayload {
            sensor_ids,
            modalities,
            intensity,
            epicenter_estimate: Some(centroid),
            kind_hypothesis: ctx.kind_hint,
            low_confidence: false,
            hazard_ids,
        },
        provenance: vec![(ActorId::Sdcc(sdcc.id), now)],
        confidence: None,
    })
}

/// Queue an operator-entered record (demographics, survey notes) for the
/// same shipment path reports take. Only `ManualRecord` reports may enter
/// this way.
pub fn sdcc_insert_manual(sdcc: &mut Sdcc, report: &Report) -> Result<(), LevelOneError> {
    if report.kind != ReportKind::ManualRecord {
        return Err(LevelOneError::KindMismatch {
            expected: ReportKind::ManualRecord,
            got: report.kind,
        });
    }
    sdcc.outbox.push_back(report.id);
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================
