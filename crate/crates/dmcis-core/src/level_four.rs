//! Warning tier: the central data center (CDC) matches processed reports
//! against a reference database and asks the disaster control center (DCC)
//! to warn the public; emergencies can bypass both over a direct channel.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::level_three::{HistoryOutcome, HistoryRecord};
use crate::model::{
    AreaId, CdcId, HazardKind, Report, ReportId, ReportKind, Severity, SimTime, Violation,
    WarningChannel,
};

#[derive(Debug, Error, PartialEq)]
pub enum LevelFourError {
    #[error("only processed reports reach a warning decision, got {got:?}")]
    KindMismatch { got: ReportKind },
    #[error("area {0:?} has no subscriber entry")]
    UnknownArea(AreaId),
    #[error("bypass is reserved for emergencies, got {got:?}")]
    SeverityTooLow { got: Severity },
}

// ============================================================================
// CDC
// ============================================================================

/// Central data center. The reference database shares the record shape the
/// DPC history uses; the difference is scope, not schema.
#[derive(Debug, Clone)]
pub struct Cdc {
    pub id: CdcId,
    /// Similarity at or above this warns.
    pub similarity_threshold: f64,
    pub reference_db: Vec<HistoryRecord>,
    /// Every report that reached this CDC, in arrival order.
    pub archive: Vec<ReportId>,
}

/// Score how closely a report resembles anything on record for its area and
/// hypothesized kind, in [0, 1].
///
/// Per matching record: closeness is one minus the relative intensity
/// deviation (capped at one), downweighted by half if the record ended as a
/// false alarm. The best record wins; no matching record scores zero.
pub fn cdc_similarity(area: &str, kind: HazardKind, intensity: f64, db: &[HistoryRecord]) -> f64 {
    db.iter()
        .filter(|r| r.area == area && r.kind == kind)
        .map(|r| {
            let deviation = if r.intensity > 0.0 {
                ((intensity - r.intensity).abs() / r.intensity).min(1.0)
            } else if intensity == 0.0 {
                0.0
            } else {
                1.0
            };
            let outcome_factor = match r.outcome {
                HistoryOutcome::DisasterConfirmed => 1.0,
                HistoryOutcome::FalseAlarm => 0.5,
            };
            (1.0 - deviation) * outcome_factor
        })
        .fold(0.0, f64::max)
}

/// The CDC's verdict on one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningDecision {
    pub report: ReportId,
    pub area: AreaId,
    pub kind: HazardKind,
    pub severity: Severity,
    pub similarity: f64,
    pub warn: bool,
    pub decided_at: SimTime,
}

/// Archive a processed report and decide whether to warn: the similarity
/// gate passes, or the report itself carries emergency severity (the public
/// still gets warned even when the archives have never seen anything like
/// it).
pub fn cdc_decide(cdc: &mut Cdc, report: &Report, now: SimTime) -> Result<WarningDecision, LevelFourError> {
    if report.kind != ReportKind::Processed {
        return Err(LevelFourError::KindMismatch { got: report.kind });
    }
    cdc.archive.push(report.id);
    let similarity = cdc_similarity(
        &report.origin_area,
        report.payload.kind_hypothesis,
        report.payload.intensity,
        &cdc.reference_db,
    );
    let warn = similarity >= cdc.similarity_threshold || report.severity == Severity::Emergency;
    Ok(WarningDecision {
        report: report.id,
        area: report.origin_area.clone(),
        kind: report.payload.kind_hypothesis,
        severity: report.severity,
        similarity,
        warn,
        decided_at: now,
    })
}

// ============================================================================
// DCC
// ============================================================================

/// Disaster control center: owns the subscriber lists and the outbound
/// messaging machinery.
#[derive(Debug, Clone)]
pub struct Dcc {
    /// Subscriber count per area.
    pub subscribers: BTreeMap<AreaId, u64>,
    /// Sustained SMS throughput, messages per second.
    pub sms_rate_per_s: f64,
    /// Fixed setup latency before the first message leaves.
    pub sms_base_latency: f64,
    pub channels: Vec<WarningChannel>,
}

/// Compute when each configured channel finishes covering an area. SMS
/// drains the subscriber list at the sustained rate after the base latency;
/// internet messaging reaches everyone at the base latency.
pub fn dcc_disseminate(
    dcc: &Dcc,
    area: &str,
    now: SimTime,
) -> Result<Vec<(WarningChannel, SimTime)>, LevelFourError> {
    let m = *dcc
        .subscribers
        .get(area)
        .ok_or_else(|| LevelFourError::UnknownArea(area.to_owned()))? as f64;
    let mut out = Vec::new();
    for ch in &dcc.channels {
        let done = match ch {
            WarningChannel::Sms => now.offset(dcc.sms_base_latency + m / dcc.sms_rate_per_s),
            WarningChannel::InternetMessaging => now.offset(dcc.sms_base_latency),
        };
        if !out.iter().any(|(c, _)| c == ch) {
            out.push((*ch, done));
        }
    }
    Ok(out)
}

// ============================================================================
// Emergency bypass
// ============================================================================

/// Only emergency-severity reports may use the direct voice channel. The
/// report itself stays on the normal path; the call is an extra signal, not
/// a diversion.
pub fn bypass_gate(report: &Report) -> Result<(), LevelFourError> {
    if report.severity != Severity::Emergency {
        return Err(LevelFourError::SeverityTooLow { got: report.severity });
    }
    Ok(())
}

// ============================================================================
// Center ratio
// ============================================================================

pub const EQ3_RATIO: &str = "eq3_dpc_cdc_ratio";
pub const CDC_REQUIRED: &str = "cdc_required";

/// DPCs must strongly outnumber CDCs: the DPC count has to exceed the CDC
/// count times the dominance factor. No CDC at all is structurally invalid.
pub fn validate_cdc_count(dpc_count: u32, cdc_count: u32, dominance_factor: f64) -> Vec<Violation> {
    if cdc_count == 0 {
        return vec![Violation::new(CDC_REQUIRED, "at least one cdc is required")];
    }
    if (dpc_count as f64) <= cdc_count as f64 * dominance_factor {
        return vec![Violation::new(
            EQ3_RATIO,
            format!(
                "{dpc_count} dpcs for {cdc_count} cdcs does not exceed the dominance factor {dominance_factor}"
            ),
        )];
    }
    Vec::new()
}

// ============================================================================
// Tests
// ============================================================================
