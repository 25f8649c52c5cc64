//! End-to-end runs through all four tiers on small hand-built scenarios
//! where the expected event flow is known exactly.

use std::collections::BTreeMap;

use dmcis_core::level_three::{HistoryOutcome, HistoryRecord};
use dmcis_core::level_two::RadioStandard;
use dmcis_core::scenario::{
    AreaSpec, CdcSpec, DccSpec, DpcSpec, ManualRecordSpec, MapSpec, Params, Scenario, SdccSpec,
    SensorSpec, SCHEMA_TAG,
};
use dmcis_core::trace::TraceKind;
use dmcis_core::{
    run_scenario, validate_scenario, HazardEvent, HazardField, HazardKind, Modality, Position,
    Rect, RunConfig, Severity, SimTime,
};

// ============================================================================
// Builders
// ============================================================================

fn flood_history(intensity: f64) -> HistoryRecord {
    HistoryRecord {
        area: "riverside".into(),
        kind: HazardKind::Flood,
        intensity,
        year_tag: 1998,
        outcome: HistoryOutcome::DisasterConfirmed,
    }
}

/// One SDCC with six sensors on a line, one DPC, one CDC. The hazard peaks
/// at 5.0 over the sensor at the epicenter, so five of six sensors detect.
/// `dpc_x` decides direct link (close) versus ferry (far).
fn river_scenario(dpc_x: f64) -> Scenario {
    let sensors: Vec<SensorSpec> = [200.0, 250.0, 300.0, 350.0, 400.0, 700.0]
        .iter()
        .enumerate()
        .map(|(i, x)| SensorSpec {
            id: i as u32 + 1,
            pos: Position::new(*x, 0.0),
            home_sdcc: 1,
            modality: Modality::Acoustic,
            detect_threshold: 1.0,
            sample_period: 10.0,
        })
        .collect();
    Scenario {
        schema: SCHEMA_TAG.to_owned(),
        seed: 7,
        duration: 600.0,
        delta: 500.0,
        region: Rect { x_min: 0.0, y_min: -100.0, x_max: 2000.0, y_max: 200.0 },
        areas: vec![AreaSpec {
            id: "riverside".into(),
            radio: RadioStandard::G,
            kind_hint: HazardKind::Flood,
        }],
        sensors,
        sdccs: vec![SdccSpec {
            id: 1,
            area: "riverside".into(),
            pos: Position::new(300.0, 50.0),
            tau: 3,
            window: 60.0,
            refractory: 300.0,
        }],
        maps: Vec::new(),
        dpcs: vec![DpcSpec {
            id: 1,
            area: "riverside".into(),
            pos: Position::new(dpc_x, 50.0),
            confidence_threshold: 0.7,
            max_reprocess: 1,
            reprocess_wait: 30.0,
            peers: Vec::new(),
            history: vec![flood_history(5.0)],
        }],
        cdcs: vec![CdcSpec {
            id: 1,
            similarity_threshold: 0.6,
            reference_db: vec![flood_history(5.0)],
        }],
        dcc: DccSpec {
            subscribers: BTreeMap::from([("riverside".to_string(), 1000)]),
            sms_rate_per_s: 100.0,
            sms_base_latency: 1.0,
            channels: vec![dmcis_core::WarningChannel::Sms],
        },
        pairs: vec![(1, 1)],
        hazards: HazardField {
            events: vec![HazardEvent {
                id: "flood1".into(),
                kind: HazardKind::Flood,
                epicenter: Position::new(300.0, 0.0),
                radius: 400.0,
                onset: SimTime(100.0),
                duration: 200.0,
                peak_intensity: 5.0,
                severity: Severity::Emergency,
                ground_truth_warnable: true,
            }],
            background_noise_sigma: 0.0,
        },
        manual_records: Vec::new(),
        sensor_failures: Vec::new(),
        params: Params { dominance_factor: 0.25, ..Params::default() },
    }
}

fn kinds(out: &dmcis_core::RunOutcome) -> Vec<TraceKind> {
    out.trace.events().iter().map(|e| e.kind).collect()
}

fn count(out: &dmcis_core::RunOutcome, k: TraceKind) -> usize {
    out.trace.events().iter().filter(|e| e.kind == k).count()
}

// ============================================================================
// Direct-link pipeline
// ============================================================================

#[test]
fn direct_link_pipeline_produces_one_warning() {
    let s = river_scenario(500.0); // 200 m away: inside delta, direct link
    assert!(validate_scenario(&s).is_empty());
    let out = run_scenario(&s, &RunConfig::default()).unwrap();

    // exactly one report: the refractory holds until the hazard has ended
    assert_eq!(count(&out, TraceKind::ReportEmitted), 1);
    assert_eq!(count(&out, TraceKind::TransferComplete), 1);
    assert_eq!(count(&out, TraceKind::WarningIssued), 1);
    assert_eq!(count(&out, TraceKind::DisseminationComplete), 1);
    assert_eq!(count(&out, TraceKind::EmergencyCall), 1, "peak intensity grades emergency");
    assert_eq!(count(&out, TraceKind::ContactOpen), 0, "no ferry in a direct-link deployment");

    // the chain runs in causal order for the single report
    let seq: Vec<TraceKind> = kinds(&out)
        .into_iter()
        .filter(|k| {
            matches!(
                k,
                TraceKind::ReportEmitted
                    | TraceKind::TransferComplete
                    | TraceKind::DpcDisposition
                    | TraceKind::CdcDecision
                    | TraceKind::WarningIssued
                    | TraceKind::DisseminationComplete
            )
        })
        .collect();
    assert_eq!(
        seq,
        vec![
            TraceKind::ReportEmitted,
            TraceKind::TransferComplete,
            TraceKind::DpcDisposition,
            TraceKind::CdcDecision,
            TraceKind::WarningIssued,
            TraceKind::DisseminationComplete,
        ]
    );

    let transfer = out
        .trace
        .events()
        .iter()
        .find(|e| e.kind == TraceKind::TransferComplete)
        .unwrap();
    assert_eq!(transfer.detail["link"], "direct");
    assert_eq!(transfer.detail["from"], "sdcc:1");
    assert_eq!(transfer.detail["to"], "dpc:1");

    // first aggregation happens at the first window close after onset
    let emitted = out.trace.events().iter().find(|e| e.kind == TraceKind::ReportEmitted).unwrap();
    assert_eq!(emitted.t, SimTime(120.0));
    assert_eq!(emitted.detail["k"], 5, "five of six sensors sit inside the detection radius");
    assert_eq!(emitted.detail["severity"], "emergency");

    // metrics line up with the script
    let ev = &out.metrics.events[0];
    assert!(ev.warned && !ev.missed);
    assert!(ev.warning_latency.unwrap() > 20.0 && ev.warning_latency.unwrap() < 30.0);
    assert_eq!(out.metrics.summary.true_warnings, 1);
    assert_eq!(out.metrics.summary.false_warnings, 0);
    assert_eq!(out.metrics.summary.delivery_ratio, 1.0);
    // direct hop at 27 Mbit/s effective moves 10 kB in milliseconds
    assert!(out.metrics.summary.delivery_latency_mean.unwrap() < 0.01);
}

// ============================================================================
// Ferry pipeline
// ============================================================================

#[test]
fn ferry_pipeline_carries_the_report() {
    let mut s = river_scenario(1500.0); // 1200 m away: needs the ferry
    s.maps = vec![MapSpec {
        id: 1,
        area: "riverside".into(),
        route: vec![Position::new(300.0, 50.0), Position::new(1500.0, 50.0)],
        speed: 50.0,
        phase: 0.0,
        buffer_capacity: 1_000_000,
    }];
    assert!(validate_scenario(&s).is_empty());
    let out = run_scenario(&s, &RunConfig::default()).unwrap();

    assert_eq!(count(&out, TraceKind::ReportEmitted), 1);
    assert!(count(&out, TraceKind::ContactOpen) >= 2, "pickup and delivery passes");
    assert_eq!(count(&out, TraceKind::TransferComplete), 2, "sdcc to map, map to dpc");
    assert_eq!(count(&out, TraceKind::WarningIssued), 1);

    let transfers: Vec<_> = out
        .trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceKind::TransferComplete)
        .collect();
    assert_eq!(transfers[0].detail["from"], "sdcc:1");
    assert_eq!(transfers[0].detail["to"], "map:1");
    assert_eq!(transfers[0].detail["link"], "contact");
    assert_eq!(transfers[1].detail["from"], "map:1");
    assert_eq!(transfers[1].detail["to"], "dpc:1");

    // the ferry (first custodian) places the emergency call, not the dpc
    let call = out.trace.events().iter().find(|e| e.kind == TraceKind::EmergencyCall).unwrap();
    assert_eq!(call.actor.to_string(), "map:1");

    // ferry delivery is slower than a direct link but bounded by route laps
    let lat = out.metrics.summary.delivery_latency_mean.unwrap();
    assert!(lat > 10.0 && lat < 96.0, "one lap is 48 s, latency {lat}");

    let fs = &out.final_state;
    assert_eq!(fs.delivered.len(), 1);
    assert!(fs.buffered().is_empty());
}

// ============================================================================
// Low-confidence hold and flagged forward
// ============================================================================

#[test]
fn starved_report_is_held_then_flagged() {
    let mut s = river_scenario(500.0);
    // shrink the hazard so exactly three sensors (250, 300, 350) detect;
    // with tau = 3 and no history the score is 3/3 * 0.8 = 0.8, under 0.9
    s.hazards.events[0].radius = 120.0;
    s.hazards.events[0].peak_intensity = 3.0;
    s.hazards.events[0].severity = Severity::Urgent;
    s.sdccs[0].tau = 3;
    s.dpcs[0].confidence_threshold = 0.9;
    s.dpcs[0].history.clear(); // no precedent: history factor 0.8
    let out = run_scenario(&s, &RunConfig::default()).unwrap();

    let dispositions: Vec<String> = out
        .trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceKind::DpcDisposition)
        .map(|e| e.detail["disposition"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(
        dispositions,
        vec!["reprocess".to_string(), "forward_flagged".to_string()],
        "one wait cycle, then give up and flag"
    );

    // the reprocess wait delays the decision by at least one cycle
    let held_at = out.trace.events().iter().find(|e| e.kind == TraceKind::DpcDisposition).unwrap().t;
    let decided = out.trace.events().iter().find(|e| e.kind == TraceKind::CdcDecision).unwrap().t;
    assert!(decided.seconds() - held_at.seconds() >= s.dpcs[0].reprocess_wait);
}

// ============================================================================
// Merging a second report into a held one
// ============================================================================

#[test]
fn corroborating_report_merges_into_held_slot() {
    let mut s = river_scenario(500.0);
    // second SDCC with its own small field, same area and DPC
    s.sdccs.push(SdccSpec {
        id: 2,
        area: "riverside".into(),
        pos: Position::new(800.0, 50.0),
        tau: 1,
        window: 60.0,
        refractory: 300.0,
    });
    for (i, x) in [750.0, 850.0].iter().enumerate() {
        s.sensors.push(SensorSpec {
            id: 10 + i as u32,
            pos: Position::new(*x, 0.0),
            home_sdcc: 2,
            modality: Modality::WaterLevel,
            detect_threshold: 1.0,
            sample_period: 10.0,
        });
    }
    s.pairs.push((2, 1));
    // widen the hazard so both fields light up: all six of sdcc 1's
    // sensors detect, and sensor 10 (750 m) is the only one of sdcc 2's
    s.hazards.events[0].radius = 700.0;
    s.hazards.events[0].severity = Severity::Urgent;
    s.hazards.events[0].peak_intensity = 4.0; // keeps severity below emergency
    // force holding: a full-coverage no-history report scores 0.8
    s.sdccs[0].tau = 6;
    s.dpcs[0].confidence_threshold = 0.95;
    s.dpcs[0].history.clear();
    s.dpcs[0].max_reprocess = 3;
    let out = run_scenario(&s, &RunConfig::default()).unwrap();

    let merged = out
        .trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceKind::DpcDisposition)
        .filter(|e| e.detail["disposition"] == "merged")
        .count();
    assert!(merged >= 1, "the second field's report lands in the held slot");

    // both reports were delivered; one was absorbed, so at most one
    // decision reaches the cdc per wait cycle
    assert_eq!(out.final_state.delivered.len(), count(&out, TraceKind::ReportEmitted));
}

// ============================================================================
// Manual records
// ============================================================================

#[test]
fn manual_record_is_archived_without_a_decision() {
    let mut s = river_scenario(500.0);
    s.hazards.events.clear(); // quiet run: only the manual record moves
    s.manual_records = vec![ManualRecordSpec {
        sdcc: 1,
        at: 50.0,
        size_bytes: 2_000,
        label: "census".into(),
    }];
    let out = run_scenario(&s, &RunConfig::default()).unwrap();

    assert_eq!(count(&out, TraceKind::ReportEmitted), 1);
    let emitted = out.trace.events().iter().find(|e| e.kind == TraceKind::ReportEmitted).unwrap();
    assert_eq!(emitted.detail["kind"], "manual_record");
    assert_eq!(emitted.detail["label"], "census");

    let decision = out.trace.events().iter().find(|e| e.kind == TraceKind::CdcDecision).unwrap();
    assert_eq!(decision.detail["decision"], "archive");
    assert_eq!(count(&out, TraceKind::WarningIssued), 0, "archival data never warns");
    assert_eq!(out.final_state.cdc_archives[&1].len(), 1);
}

// ============================================================================
// Replay determinism
// ============================================================================

#[test]
fn both_transport_paths_replay_byte_identically() {
    for dpc_x in [500.0, 1500.0] {
        let mut s = river_scenario(dpc_x);
        if dpc_x > 1000.0 {
            s.maps = vec![MapSpec {
                id: 1,
                area: "riverside".into(),
                route: vec![Position::new(300.0, 50.0), Position::new(1500.0, 50.0)],
                speed: 50.0,
                phase: 0.0,
                buffer_capacity: 1_000_000,
            }];
        }
        s.hazards.background_noise_sigma = 0.05; // exercise the rng paths
        let a = run_scenario(&s, &RunConfig::default()).unwrap();
        let b = run_scenario(&s, &RunConfig::default()).unwrap();
        assert_eq!(a.trace.to_jsonl_string(), b.trace.to_jsonl_string());
        assert_eq!(a.metrics.to_json_string(), b.metrics.to_json_string());
    }
}

