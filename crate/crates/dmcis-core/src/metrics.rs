//! Run metrics, derived entirely from the trace plus the scenario's hazard
//! script. Recomputing metrics from a stored trace file therefore gives
//! byte-identical output; nothing here peeks at simulator internals.
//!
//! Latency conventions:
//! - warning latency: hazard onset to the first warning that cites the
//!   hazard (warnable hazards only in the aggregates)
//! - delivery latency: report emission to its first arrival at any DPC
//! - bypass latency: hazard onset to the first emergency call citing it

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::ReportId;
use crate::scenario::Scenario;
use crate::trace::{TraceEvent, TraceKind};

pub const METRICS_SCHEMA_TAG: &str = "dmcis-metrics/1";

// ============================================================================
// Report shape
// ============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub event: String,
    pub kind: String,
    pub warnable: bool,
    pub onset: f64,
    pub first_warning_at: Option<f64>,
    pub warning_latency: Option<f64>,
    pub first_emergency_call_at: Option<f64>,
    pub bypass_latency: Option<f64>,
    pub warned: bool,
    pub missed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub emitted_reports: u64,
    pub delivered_reports: u64,
    pub dropped_reports: u64,
    /// Reports still somewhere between their SDCC and a DPC when the run
    /// ended; `emitted = delivered + dropped + buffered` always holds.
    pub buffered_reports: u64,
    pub delivery_ratio: f64,
    pub warnings_issued: u64,
    pub true_warnings: u64,
    /// Warnings citing no warnable hazard (spurious spikes, pure noise).
    pub false_warnings: u64,
    pub missed_events: u64,
    pub emergency_calls: u64,
    pub warning_latency_mean: Option<f64>,
    pub warning_latency_p95: Option<f64>,
    pub delivery_latency_mean: Option<f64>,
    pub delivery_latency_p95: Option<f64>,
    pub buffer_peak_bytes: u64,
    pub buffer_peak_by_map: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub events: Vec<EventMetrics>,
    pub summary: Summary,
}

// ============================================================================
// Computation
// ============================================================================

fn detail_str<'a>(ev: &'a TraceEvent, key: &str) -> Option<&'a str> {
    ev.detail.get(key).and_then(|v| v.as_str())
}

fn detail_u64(ev: &TraceEvent, key: &str) -> Option<u64> {
    ev.detail.get(key).and_then(|v| v.as_u64().or_else(|| v.as_f64().map(|f| f as u64)))
}

fn detail_hazards(ev: &TraceEvent) -> Vec<&str> {
    ev.detail
        .get("hazards")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|x| x.as_str()).collect())
        .unwrap_or_default()
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Nearest-rank 95th percentile of a sample.
fn p95(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).max(1);
    Some(sorted[rank - 1])
}

pub fn compute_metrics(events: &[TraceEvent], scenario: &Scenario) -> MetricsReport {
    let mut emitted_at: BTreeMap<ReportId, f64> = BTreeMap::new();
    let mut first_dpc_at: BTreeMap<ReportId, f64> = BTreeMap::new();
    let mut dropped: BTreeSet<ReportId> = BTreeSet::new();
    let mut warnings: Vec<&TraceEvent> = Vec::new();
    let mut calls: Vec<&TraceEvent> = Vec::new();
    let mut map_level: BTreeMap<String, i64> = BTreeMap::new();
    let mut map_peak: BTreeMap<String, u64> = BTreeMap::new();

    for ev in events {
        match ev.kind {
            TraceKind::ReportEmitted => {
                if let Some(r) = ev.report {
                    emitted_at.entry(r).or_insert(ev.t.seconds());
                }
            }
            TraceKind::TransferComplete => {
                let bytes = detail_u64(ev, "bytes").unwrap_or(0) as i64;
                if let Some(to) = detail_str(ev, "to") {
                    if to.starts_with("dpc:") {
                        if let Some(r) = ev.report {
                            first_dpc_at.entry(r).or_insert(ev.t.seconds());
                        }
                    }
                    if to.starts_with("map:") {
                        let level = map_level.entry(to.to_owned()).or_insert(0);
                        *level += bytes;
                        let peak = map_peak.entry(to.to_owned()).or_insert(0);
                        *peak = (*peak).max((*level).max(0) as u64);
                    }
                }
                if let Some(from) = detail_str(ev, "from") {
                    if from.starts_with("map:") {
                        *map_level.entry(from.to_owned()).or_insert(0) -= bytes;
                    }
                }
            }
            TraceKind::ReportDropped => {
                if let Some(r) = ev.report {
                    dropped.insert(r);
                }
            }
            TraceKind::WarningIssued => warnings.push(ev),
            TraceKind::EmergencyCall => calls.push(ev),
            _ => {}
        }
    }

    let warnable: BTreeMap<&str, bool> = scenario
        .hazards
        .events
        .iter()
        .map(|e| (e.id.as_str(), e.ground_truth_warnable))
        .collect();

    let mut true_warnings = 0u64;
    let mut false_warnings = 0u64;
    for w in &warnings {
        let cited = detail_hazards(w);
        if cited.iter().any(|id| warnable.get(id).copied().unwrap_or(false)) {
            true_warnings += 1;
        } else {
            false_warnings += 1;
        }
    }

    let mut event_rows = Vec::new();
    let mut warn_latencies = Vec::new();
    for e in &scenario.hazards.events {
        let onset = e.onset.seconds();
        let first_warning_at = warnings
            .iter()
            .filter(|w| detail_hazards(w).contains(&e.id.as_str()))
            .map(|w| w.t.seconds())
            .next();
        let first_emergency_call_at = calls
            .iter()
            .filter(|c| detail_hazards(c).contains(&e.id.as_str()))
            .map(|c| c.t.seconds())
            .next();
        let warning_latency = first_warning_at.map(|t| t - onset);
        let bypass_latency = first_emergency_call_at.map(|t| t - onset);
        let warned = first_warning_at.is_some();
        if e.ground_truth_warnable {
            if let Some(l) = warning_latency {
                warn_latencies.push(l);
            }
        }
        event_rows.push(EventMetrics {
            event: e.id.clone(),
            kind: e.kind.to_string(),
            warnable: e.ground_truth_warnable,
            onset,
            first_warning_at,
            warning_latency,
            first_emergency_call_at,
            bypass_latency,
            warned,
            missed: e.ground_truth_warnable && !warned,
        });
    }

    let delivery_latencies: Vec<f64> = first_dpc_at
        .iter()
        .filter_map(|(r, t)| emitted_at.get(r).map(|e| t - e))
        .collect();

    let emitted_reports = emitted_at.len() as u64;
    let delivered_reports = first_dpc_at.len() as u64;
    let dropped_reports = dropped.len() as u64;
    let summary = Summary {
        emitted_reports,
        delivered_reports,
        dropped_reports,
        buffered_reports: emitted_reports.saturating_sub(delivered_reports + dropped_reports),
        delivery_ratio: if emitted_reports == 0 {
            1.0
        } else {
            delivered_reports as f64 / emitted_reports as f64
        },
        warnings_issued: warnings.len() as u64,
        true_warnings,
        false_warnings,
        missed_events: event_rows.iter().filter(|e| e.missed).count() as u64,
        emergency_calls: calls.len() as u64,
        warning_latency_mean: mean(&warn_latencies),
        warning_latency_p95: p95(&warn_latencies),
        delivery_latency_mean: mean(&delivery_latencies),
        delivery_latency_p95: p95(&delivery_latencies),
        buffer_peak_bytes: map_peak.values().copied().max().unwrap_or(0),
        buffer_peak_by_map: map_peak,
    };

    MetricsReport { schema: METRICS_SCHEMA_TAG.to_owned(), events: event_rows, summary }
}

// ============================================================================
// Writers
// ============================================================================

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    /// One header, one row per hazard event, one trailing summary row.
    /// Event columns stay empty on the summary row and vice versa.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "row,event,kind,warnable,onset,first_warning_at,warning_latency,\
             first_emergency_call_at,bypass_latency,warned,missed,\
             emitted,delivered,dropped,buffered,delivery_ratio,\
             warnings_issued,true_warnings,false_warnings,missed_events,emergency_calls,\
             warning_latency_mean,warning_latency_p95,delivery_latency_mean,delivery_latency_p95,\
             buffer_peak_bytes\n",
        );
        for e in &self.events {
            out.push_str(&format!(
                "event,{},{},{},{},{},{},{},{},{},{},,,,,,,,,,,,,,,\n",
                e.event,
                e.kind,
                e.warnable,
                e.onset,
                csv_opt(e.first_warning_at),
                csv_opt(e.warning_latency),
                csv_opt(e.first_emergency_call_at),
                csv_opt(e.bypass_latency),
                e.warned,
                e.missed,
            ));
        }
        let s = &self.summary;
        out.push_str(&format!(
            "summary,,,,,,,,,,,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.emitted_reports,
            s.delivered_reports,
            s.dropped_reports,
            s.buffered_reports,
            s.delivery_ratio,
            s.warnings_issued,
            s.true_warnings,
            s.false_warnings,
            s.missed_events,
            s.emergency_calls,
            csv_opt(s.warning_latency_mean),
            csv_opt(s.warning_latency_p95),
            csv_opt(s.delivery_latency_mean),
            csv_opt(s.delivery_latency_p95),
            s.buffer_peak_bytes,
        ));
        out
    }
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActorId, SimTime};
    use crate::scenario::generate;
    use crate::trace::{detail, TraceEvent};
    use serde_json::json;

    fn scenario_with_events() -> Scenario {
        let mut s = generate(1);
        s.hazards.events.clear();
        s.hazards.events.push(crate::model::HazardEvent {
            id: "flood1".into(),
            kind: crate::model::HazardKind::Flood,
            epicenter: crate::model::Position::new(500.0, 500.0),
            radius: 400.0,
            onset: SimTime(100.0),
            duration: 300.0,
            peak_intensity: 5.0,
            severity: crate::model::Severity::Urgent,
            ground_truth_warnable: true,
        });
        s.hazards.events.push(crate::model::HazardEvent {
            id: "spike1".into(),
            kind: crate::model::HazardKind::FalseSpike,
            epicenter: crate::model::Position::new(600.0, 500.0),
            radius: 100.0,
            onset: SimTime(50.0),
            duration: 60.0,
            peak_intensity: 8.0,
            severity: crate::model::Severity::Emergency,
            ground_truth_warnable: false,
        });
        s
    }

    fn row(t: f64, kind: TraceKind, actor: ActorId, report: Option<u64>, d: serde_json::Value) -> TraceEvent {
        TraceEvent { t: SimTime(t), kind, actor, report, detail: detail(d) }
    }

    #[test]
    fn latencies_and_classification() {
        let s = scenario_with_events();
        let trace = vec![
            row(160.0, TraceKind::ReportEmitted, ActorId::Sdcc(1), Some(1), json!({"k": 4})),
            row(200.0, TraceKind::TransferComplete, ActorId::Dpc(1), Some(1),
                json!({"from": "sdcc:1", "to": "dpc:1", "bytes": 10000, "link": "direct"})),
            row(210.0, TraceKind::EmergencyCall, ActorId::Dpc(1), Some(1),
                json!({"hazards": ["flood1"]})),
            row(460.0, TraceKind::WarningIssued, ActorId::Dcc, Some(1),
                json!({"area": "area1", "hazards": ["flood1"]})),
            row(470.0, TraceKind::WarningIssued, ActorId::Dcc, Some(2),
                json!({"area": "area1", "hazards": ["spike1"]})),
        ];
        let m = compute_metrics(&trace, &s);

        let flood = &m.events[0];
        assert_eq!(flood.event, "flood1");
        assert_eq!(flood.first_warning_at, Some(460.0));
        assert_eq!(flood.warning_latency, Some(360.0));
        assert_eq!(flood.bypass_latency, Some(110.0));
        assert!(flood.warned && !flood.missed);

        let spike = &m.events[1];
        assert!(spike.warned);
        assert!(!spike.missed, "unwarnable events cannot be missed");

        assert_eq!(m.summary.warnings_issued, 2);
        assert_eq!(m.summary.true_warnings, 1);
        assert_eq!(m.summary.false_warnings, 1);
        assert_eq!(m.summary.emergency_calls, 1);
        assert_eq!(m.summary.delivery_latency_mean, Some(40.0));
        assert_eq!(m.summary.warning_latency_mean, Some(360.0));
        assert_eq!(m.summary.warning_latency_p95, Some(360.0));
    }

    #[test]
    fn missed_event_has_no_latency() {
        let s = scenario_with_events();
        let m = compute_metrics(&[], &s);
        assert!(m.events[0].missed);
        assert_eq!(m.events[0].warning_latency, None);
        assert_eq!(m.summary.missed_events, 1, "only the warnable event counts");
        assert_eq!(m.summary.warning_latency_mean, None);
        assert_eq!(m.summary.delivery_ratio, 1.0, "no reports means nothing lost");
    }

    #[test]
    fn conservation_counts() {
        let s = scenario_with_events();
        let trace = vec![
            row(10.0, TraceKind::ReportEmitted, ActorId::Sdcc(1), Some(1), json!({})),
            row(20.0, TraceKind::ReportEmitted, ActorId::Sdcc(1), Some(2), json!({})),
            row(30.0, TraceKind::ReportEmitted, ActorId::Sdcc(1), Some(3), json!({})),
            row(40.0, TraceKind::TransferComplete, ActorId::Dpc(1), Some(1),
                json!({"from": "sdcc:1", "to": "dpc:1", "bytes": 10000})),
            row(50.0, TraceKind::ReportDropped, ActorId::Sdcc(1), Some(2), json!({"reason": "oversize"})),
        ];
        let m = compute_metrics(&trace, &s);
        let sm = &m.summary;
        assert_eq!(
            (sm.emitted_reports, sm.delivered_reports, sm.dropped_reports, sm.buffered_reports),
            (3, 1, 1, 1)
        );
        assert!((sm.delivery_ratio - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn buffer_peak_tracks_ferry_load() {
        let s = scenario_with_events();
        let trace = vec![
            row(10.0, TraceKind::ReportEmitted, ActorId::Sdcc(1), Some(1), json!({})),
            row(12.0, TraceKind::ReportEmitted, ActorId::Sdcc(1), Some(2), json!({})),
            row(20.0, TraceKind::TransferComplete, ActorId::Map(1), Some(1),
                json!({"from": "sdcc:1", "to": "map:1", "bytes": 10000})),
            row(25.0, TraceKind::TransferComplete, ActorId::Map(1), Some(2),
                json!({"from": "sdcc:1", "to": "map:1", "bytes": 4000})),
            row(90.0, TraceKind::TransferComplete, ActorId::Dpc(1), Some(1),
                json!({"from": "map:1", "to": "dpc:1", "bytes": 10000})),
        ];
        let m = compute_metrics(&trace, &s);
        assert_eq!(m.summary.buffer_peak_bytes, 14000);
        assert_eq!(m.summary.buffer_peak_by_map.get("map:1"), Some(&14000));
        // ferry delivery counts toward dpc arrivals too
        assert_eq!(m.summary.delivered_reports, 1);
    }

    #[test]
    fn computation_is_pure() {
        let s = scenario_with_events();
        let trace = vec![row(10.0, TraceKind::ReportEmitted, ActorId::Sdcc(1), Some(1), json!({}))];
        let a = compute_metrics(&trace, &s);
        let b = compute_metrics(&trace, &s);
        assert_eq!(a, b);
        assert_eq!(a.to_json_string(), b.to_json_string());
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn csv_shape_is_stable() {
        let s = scenario_with_events();
        let m = compute_metrics(&[], &s);
        let csv = m.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + m.events.len() + 1);
        assert!(lines[0].starts_with("row,event,kind,warnable,onset"));
        let cols = lines[0].split(',').count();
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), cols, "ragged row: {line}");
        }
        assert!(lines.last().unwrap().starts_with("summary,"));
    }

    #[test]
    fn json_round_trips() {
        let s = scenario_with_events();
        let m = compute_metrics(&[], &s);
        let back: MetricsReport = serde_json::from_str(&m.to_json_string()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.schema, METRICS_SCHEMA_TAG);
    }

    #[test]
    fn p95_uses_nearest_rank() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(p95(&xs), Some(95.0));
        assert_eq!(p95(&xs[..10]), Some(10.0));
        assert_eq!(p95(&[42.0]), Some(42.0));
        assert_eq!(p95(&[]), None);
    }
}
