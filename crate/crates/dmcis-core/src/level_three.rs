//! Processing tier: data processing centers (DPCs) score incoming reports
//! against deployment coverage, sensing diversity and recorded history, and
//! decide whether to forward them upward.
//!
//! A report scraping past the aggregation threshold with one modality and no
//! historical precedent scores 0.8 before capping; richer evidence saturates
//! at 1.0. Low scores are held briefly so late corroborating reports (own or
//! peer) can merge in before the DPC gives up and forwards flagged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AreaId, DpcId, HazardKind, Position, Report, ReportId, ReportKind, ReportPayload, SimTime,
};

#[derive(Debug, Error, PartialEq)]
pub enum LevelThreeError {
    #[error("only processed reports may be forwarded, got {got:?}")]
    KindMismatch { got: ReportKind },
}

// ============================================================================
// History
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryOutcome {
    DisasterConfirmed,
    FalseAlarm,
}

/// One past event on record at a DPC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryRecord {
    pub area: AreaId,
    pub kind: HazardKind,
    pub intensity: f64,
    pub year_tag: i32,
    pub outcome: HistoryOutcome,
}

/// A report echoes history when a confirmed record of the same area and
/// kind sits within 25% of the record's intensity.
pub fn history_matches(history: &[HistoryRecord], area: &str, kind: HazardKind, intensity: f64) -> bool {
    history.iter().any(|r| {
        r.outcome == HistoryOutcome::DisasterConfirmed
            && r.area == area
            && r.kind == kind
            && (intensity - r.intensity).abs() <= 0.25 * r.intensity
    })
}

// ============================================================================
// DPC
// ============================================================================

/// A held report waiting for corroboration before re-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldReport {
    pub report: ReportId,
    /// Completed wait cycles so far.
    pub retries: u32,
    pub deadline: SimTime,
}

/// Data processing center. Runtime state; built from the scenario at load.
#[derive(Debug, Clone)]
pub struct Dpc {
    pub id: DpcId,
    pub area: AreaId,
    pub position: Position,
    /// Minimum confidence to forward without flagging.
    pub confidence_threshold: f64,
    /// How many wait-and-merge cycles are allowed before giving up.
    pub max_reprocess: u32,
    /// Length of one wait cycle in seconds.
    pub reprocess_wait: f64,
    pub peers: Vec<DpcId>,
    pub history: Vec<HistoryRecord>,
    /// Reports being held, one slot per (area, kind).
    pub held: BTreeMap<(AreaId, HazardKind), HeldReport>,
}

// ============================================================================
// Confidence
// ============================================================================

/// Inputs the score needs beyond the report itself.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceCtx {
    /// Aggregation threshold of the report's origin SDCC.
    pub tau: u32,
    /// Live sensors in the population that SDCC aggregates over.
    pub alive: u32,
    /// Distinct modalities deployed in that population.
    pub modalities_deployed: u32,
}

/// Score a report in [0, 1].
///
/// coverage (contributing / live sensors) times modality agreement times a
/// history factor, normalized so that a bare-threshold, single-modality,
/// no-history report lands at exactly 0.8. The history factor is 1.0 with a
/// confirmed precedent and 0.8 without.
pub fn confidence(payload: &ReportPayload, ctx: ConfidenceCtx, history: &[HistoryRecord], area: &str) -> f64 {
    assert!(ctx.tau >= 1 && ctx.alive >= 1 && ctx.modalities_deployed >= 1);
    let coverage = payload.k() as f64 / ctx.alive as f64;
    let agreement = payload.modalities.len() as f64 / ctx.modalities_deployed as f64;
    let hist = if history_matches(history, area, payload.kind_hypothesis, payload.intensity) {
        1.0
    } else {
        0.8
    };
    let normalizer = ctx.tau as f64 / ctx.alive as f64;
    (coverage * agreement * hist / normalizer).min(1.0)
}

// ============================================================================
// Dispositions
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Forward,
    Reprocess,
    ForwardFlagged,
}

impl std::fmt::Display for Disposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Disposition::Forward => f.write_str("forward"),
            Disposition::Reprocess => f.write_str("reprocess"),
            Disposition::ForwardFlagged => f.write_str("forward_flagged"),
        }
    }
}

/// Decide what to do with a scored report. `retries` counts wait cycles
/// already burned; with `max_reprocess = 0` a low score is flagged and
/// forwarded immediately.
pub fn dpc_process(dpc: &Dpc, conf: f64, retries: u32) -> Disposition {
    if conf >= dpc.confidence_threshold {
        Disposition::Forward
    } else if retries < dpc.max_reprocess {
        Disposition::Reprocess
    } else {
        Disposition::ForwardFlagged
    }
}

/// Fold a corroborating payload into a held one: sensor, modality and
/// scoring-linkage sets union; intensity takes the maximum; the epicenter
/// estimate follows whichever contributor saw the higher intensity.
pub fn merge_payload(held: &mut ReportPayload, incoming: &ReportPayload) {
    if incoming.intensity > held.intensity {
        held.intensity = incoming.intensity;
        held.epicenter_estimate = incoming.epicenter_estimate;
    }
    held.sensor_ids.extend(incoming.sensor_ids.iter().copied());
    held.modalities.extend(incoming.modalities.iter().copied());
    held.hazard_ids.extend(incoming.hazard_ids.iter().cloned());
}

/// Promote a report for the trip upward, recording its score and whether
/// the DPC gave up on the confidence gate.
pub fn promote(report: &mut Report, conf: f64, flagged: bool) {
    report.kind = ReportKind::Processed;
    report.confidence = Some(conf);
    report.payload.low_confidence = flagged;
}

/// Gate for the upward hop: only processed reports leave a DPC toward the
/// warning tier.
pub fn dpc_forward(report: &Report) -> Result<(), LevelThreeError> {
    if report.kind != ReportKind::Processed {
        return Err(LevelThreeError::KindMismatch { got: report.kind });
    }
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================
