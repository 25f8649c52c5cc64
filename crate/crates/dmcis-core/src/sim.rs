//! The simulation loop: builds a world from a scenario, drives the event
//! queue to the horizon, and returns the trace plus derived metrics.
//!
//! Determinism contract: one (scenario, seed) pair always produces the same
//! trace bytes. Everything iterated is an ordered map, every tie-break is
//! explicit, and each sensor draws noise from its own seeded stream, so
//! adding an actor never shifts another actor's draws.
//!
//! Transfer mechanics come in two shapes:
//! - direct links (SDCC-DPC pairs closer than delta) schedule an exact
//!   completion event; the link carries one report at a time, FIFO
//! - ferry contacts move bytes each contact tick; losing the contact
//!   discards progress and the report retries from zero later
//!
//! A report lives in its source queue until the hop completes, so at any
//! instant every report is in exactly one place: an SDCC outbox, a MAP
//! buffer, delivered, or dropped.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::json;
use thiserror::Error;

use crate::engine::{stream, Action, EngineError, EventQueue, ScheduledEvent, SimRng};
use crate::level_four::{bypass_gate, cdc_decide, dcc_disseminate, Cdc, Dcc};
use crate::level_one::{
    self, form_clusters, reelect_head, sdcc_aggregate, sdcc_insert_manual, AggregateCtx, Cluster,
    SensorNode,
};
use crate::level_three::{
    confidence, dpc_process, merge_payload, promote, ConfidenceCtx, Disposition, Dpc, HeldReport,
};
use crate::level_two::{
    needs_ferry, next_waypoint_arrival, transfer_chunk, transfer_duration_secs, Contact,
    ContactEnd, EndSnapshot, MapNode, MapSnapshot, RadioProfile,
};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{
    distance, ActorId, AreaId, CdcId, ClusterId, DpcId, HazardKind, MapId, Position, Report,
    ReportId, ReportKind, ReportPayload, SdccId, SensorId, Severity, SeverityTable, SimTime,
    Violation, WarningChannel,
};
use crate::scenario::{validate_scenario, Scenario};
use crate::trace::{detail, TraceError, TraceEvent, TraceKind, TraceLog};

// ============================================================================
// Entry points
// ============================================================================

#[derive(Debug, Clone, Copy, Default)]
pub struct RunConfig {
    /// Overrides the scenario's seed when set.
    pub seed: Option<u64>,
    /// Overrides the scenario's duration when set.
    pub until: Option<f64>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario violates deployment rules: {}", summarize(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn summarize(vs: &[Violation]) -> String {
    vs.iter().map(|v| v.code.as_str()).collect::<Vec<_>>().join(", ")
}

/// Where every report ended up, plus the raw counters the conservation
/// check needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalState {
    pub seed: u64,
    pub sdcc_outboxes: BTreeMap<SdccId, Vec<ReportId>>,
    pub map_buffers: BTreeMap<MapId, Vec<ReportId>>,
    pub dpc_held: BTreeMap<DpcId, Vec<ReportId>>,
    pub cdc_archives: BTreeMap<CdcId, Vec<ReportId>>,
    pub emitted: BTreeSet<ReportId>,
    pub delivered: BTreeSet<ReportId>,
    pub dropped: BTreeSet<ReportId>,
}

impl FinalState {
    /// Report ids still in transit between their SDCC and a DPC.
    pub fn buffered(&self) -> BTreeSet<ReportId> {
        self.sdcc_outboxes
            .values()
            .chain(self.map_buffers.values())
            .flatten()
            .copied()
            .collect()
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trace: TraceLog,
    pub metrics: MetricsReport,
    pub final_state: FinalState,
    pub events_fired: u64,
}

/// Run a scenario to its horizon. The scenario must pass
/// [`validate_scenario`]; violations are returned as an error rather than
/// silently simulated.
pub fn run_scenario(scenario: &Scenario, cfg: &RunConfig) -> Result<RunOutcome, SimError> {
    let violations = validate_scenario(scenario);
    if !violations.is_empty() {
        return Err(SimError::Invalid(violations));
    }
    let mut world = World::build(scenario, cfg);
    world.schedule_initial()?;
    while let Some(ev) = world.queue.pop_until(world.horizon) {
        world.handle(ev)?;
    }
    let horizon = world.horizon;
    world.queue.finish(horizon);
    Ok(world.into_outcome())
}

// ============================================================================
// World state
// ============================================================================

/// A direct-link transfer in flight; completion arrives as an event.
#[derive(Debug, Clone, PartialEq)]
struct DirectTransfer {
    report: ReportId,
    sdcc: SdccId,
    dpc: DpcId,
    started_at: SimTime,
}

struct World {
    scenario: Scenario,
    seed: u64,
    horizon: SimTime,
    severity: SeverityTable,

    sensors: BTreeMap<SensorId, SensorNode>,
    clusters: BTreeMap<ClusterId, Cluster>,
    sdccs: BTreeMap<SdccId, level_one::Sdcc>,
    maps: BTreeMap<MapId, MapNode>,
    dpcs: BTreeMap<DpcId, Dpc>,
    cdcs: BTreeMap<CdcId, Cdc>,
    dcc: Dcc,
    /// All forwarded reports land at the lowest-id CDC.
    target_cdc: CdcId,

    /// Allowed (SDCC, DPC) report routes.
    pairs: BTreeSet<(SdccId, DpcId)>,
    /// SDCCs with a DPC inside delta skip the ferry entirely.
    direct_to: BTreeMap<SdccId, DpcId>,
    /// Negotiated effective rate for each direct link.
    direct_rate: BTreeMap<SdccId, f64>,
    direct_busy: BTreeMap<SdccId, SimTime>,
    pending_direct: BTreeMap<u64, DirectTransfer>,
    next_transfer: u64,

    sdcc_radio: BTreeMap<SdccId, RadioProfile>,
    dpc_radio: BTreeMap<DpcId, RadioProfile>,
    area_hint: BTreeMap<SdccId, HazardKind>,
    /// Distinct modalities in each SDCC's deployment (a static property).
    modalities_deployed: BTreeMap<SdccId, u32>,

    contacts: BTreeMap<(MapId, ContactEnd), Contact>,

    reports: BTreeMap<ReportId, Report>,
    next_report_id: ReportId,
    delivered: BTreeSet<ReportId>,
    dropped: BTreeSet<ReportId>,
    bypass_called: BTreeSet<ReportId>,
    active_hazards: BTreeSet<usize>,

    queue: EventQueue,
    trace: TraceLog,
}

impl World {
    fn build(scenario: &Scenario, cfg: &RunConfig) -> World {
        let seed = cfg.seed.unwrap_or(scenario.seed);
        let horizon = SimTime(cfg.until.unwrap_or(scenario.duration));
        let severity = scenario.severity_table();
        let p = &scenario.params;

        let mut sensors: BTreeMap<SensorId, SensorNode> = scenario
            .sensors
            .iter()
            .map(|s| {
                (
                    s.id,
                    SensorNode {
                        id: s.id,
                        position: s.pos,
                        modality: s.modality,
                        detect_threshold: s.detect_threshold,
                        sample_period: s.sample_period,
                        alive: true,
                        cluster: None,
                        home_sdcc: s.home_sdcc,
                        rng: SimRng::derive(seed, &[stream::SENSOR, s.id as u64]),
                    },
                )
            })
            .collect();

        let sdcc_positions: BTreeMap<SdccId, Position> =
            scenario.sdccs.iter().map(|s| (s.id, s.pos)).collect();
        // validation guarantees every sdcc has sensors
        let clusters = form_clusters(&mut sensors, &sdcc_positions, p.k_per_cluster as usize, p.hop_delay)
            .expect("validated scenario clusters");

        let sdccs: BTreeMap<SdccId, level_one::Sdcc> = scenario
            .sdccs
            .iter()
            .map(|s| {
                (
                    s.id,
                    level_one::Sdcc {
                        id: s.id,
                        area: s.area.clone(),
                        position: s.pos,
                        tau: s.tau,
                        window: s.window,
                        refractory: s.refractory,
                        detections: Vec::new(),
                        last_emitted_at: None,
                        outbox: VecDeque::new(),
                    },
                )
            })
            .collect();

        let maps: BTreeMap<MapId, MapNode> = scenario
            .maps
            .iter()
            .map(|m| {
                let mut route = m.route.clone();
                if p.route_jitter_sigma > 0.0 {
                    let mut rng = SimRng::derive(seed, &[stream::MAP, m.id as u64]);
                    for w in &mut route {
                        w.x = (w.x + rng.normal() * p.route_jitter_sigma)
                            .clamp(scenario.region.x_min, scenario.region.x_max);
                        w.y = (w.y + rng.normal() * p.route_jitter_sigma)
                            .clamp(scenario.region.y_min, scenario.region.y_max);
                    }
                }
                (
                    m.id,
                    MapNode {
                        id: m.id,
                        area: m.area.clone(),
                        route,
                        speed: m.speed,
                        phase: m.phase,
                        buffer_capacity: m.buffer_capacity,
                        buffer: VecDeque::new(),
                        buffered_bytes: 0,
                        radio: scenario.radio_for_area(&m.area).expect("validated area"),
                        current_leg: 0,
                    },
                )
            })
            .collect();

        let dpcs: BTreeMap<DpcId, Dpc> = scenario
            .dpcs
            .iter()
            .map(|d| {
                let mut peers = d.peers.clone();
                peers.sort_unstable();
                (
                    d.id,
                    Dpc {
                        id: d.id,
                        area: d.area.clone(),
                        position: d.pos,
                        confidence_threshold: d.confidence_threshold,
                        max_reprocess: d.max_reprocess,
                        reprocess_wait: d.reprocess_wait,
                        peers,
                        history: d.history.clone(),
                        held: BTreeMap::new(),
                    },
                )
            })
            .collect();

        let cdcs: BTreeMap<CdcId, Cdc> = scenario
            .cdcs
            .iter()
            .map(|c| {
                (
                    c.id,
                    Cdc {
                        id: c.id,
                        similarity_threshold: c.similarity_threshold,
                        reference_db: c.reference_db.clone(),
                        archive: Vec::new(),
                    },
                )
            })
            .collect();
        let target_cdc = cdcs.keys().next().copied().unwrap_or(0);

        let dcc = Dcc {
            subscribers: scenario.dcc.subscribers.clone(),
            sms_rate_per_s: scenario.dcc.sms_rate_per_s,
            sms_base_latency: scenario.dcc.sms_base_latency,
            channels: scenario.dcc.channels.clone(),
        };

        let pairs: BTreeSet<(SdccId, DpcId)> = scenario.pairs.iter().copied().collect();

        let sdcc_radio: BTreeMap<SdccId, RadioProfile> = scenario
            .sdccs
            .iter()
            .map(|s| (s.id, scenario.radio_for_area(&s.area).expect("validated area")))
            .collect();
        let dpc_radio: BTreeMap<DpcId, RadioProfile> = scenario
            .dpcs
            .iter()
            .map(|d| (d.id, scenario.radio_for_area(&d.area).expect("validated area")))
            .collect();

        // nearest paired DPC inside delta wins the direct link, ties to the
        // lower id; everyone else waits for the ferry
        let mut direct_to = BTreeMap::new();
        let mut direct_rate = BTreeMap::new();
        for s in &scenario.sdccs {
            let best = pairs
                .iter()
                .filter(|(sid, _)| *sid == s.id)
                .filter_map(|(_, did)| {
                    let d = scenario.dpc(*did)?;
                    (!needs_ferry(s.pos, d.pos, scenario.delta))
                        .then(|| (distance(s.pos, d.pos), *did))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((_, did)) = best {
                direct_to.insert(s.id, did);
                let rate = sdcc_radio[&s.id]
                    .effective_rate_bps()
                    .min(dpc_radio[&did].effective_rate_bps());
                direct_rate.insert(s.id, rate);
            }
        }

        let area_hint: BTreeMap<SdccId, HazardKind> = scenario
            .sdccs
            .iter()
            .map(|s| (s.id, scenario.area(&s.area).expect("validated area").kind_hint))
            .collect();
        let modalities_deployed: BTreeMap<SdccId, u32> = scenario
            .sdccs
            .iter()
            .map(|s| {
                let m: BTreeSet<_> = scenario.sensors_of(s.id).map(|x| x.modality).collect();
                (s.id, (m.len() as u32).max(1))
            })
            .collect();

        World {
            scenario: scenario.clone(),
            seed,
            horizon,
            severity,
            sensors,
            clusters,
            sdccs,
            maps,
            dpcs,
            cdcs,
            dcc,
            target_cdc,
            pairs,
            direct_to,
            direct_rate,
            direct_busy: BTreeMap::new(),
            pending_direct: BTreeMap::new(),
            next_transfer: 1,
            sdcc_radio,
            dpc_radio,
            area_hint,
            modalities_deployed,
            contacts: BTreeMap::new(),
            reports: BTreeMap::new(),
            next_report_id: 1,
            delivered: BTreeSet::new(),
            dropped: BTreeSet::new(),
            bypass_called: BTreeSet::new(),
            active_hazards: BTreeSet::new(),
            queue: EventQueue::new(),
            trace: TraceLog::new(),
        }
    }

    fn schedule_initial(&mut self) -> Result<(), SimError> {
        for (i, e) in self.scenario.hazards.events.iter().enumerate() {
            self.queue.schedule(e.onset, Action::HazardOnset { event: i })?;
            self.queue
                .schedule(e.onset.offset(e.duration), Action::HazardEnd { event: i })?;
        }
        for id in self.sensors.keys().copied().collect::<Vec<_>>() {
            self.queue.schedule(SimTime::ZERO, Action::SensorSample { sensor: id, index: 0 })?;
        }
        for (id, s) in &self.sdccs {
            self.queue
                .schedule(SimTime(s.window), Action::SdccWindowClose { sdcc: *id, index: 1 })?;
        }
        if !self.maps.is_empty() {
            self.queue
                .schedule(SimTime(self.scenario.params.contact_tick), Action::ContactCheckTick { index: 1 })?;
            for (id, m) in &self.maps {
                if let Some((_, at)) = next_waypoint_arrival(&m.route, m.speed, m.phase, SimTime::ZERO) {
                    self.queue.schedule(at, Action::MapWaypointArrival { map: *id })?;
                }
            }
        }
        for f in &self.scenario.sensor_failures {
            self.queue.schedule(SimTime(f.at), Action::SensorFailure { sensor: f.sensor })?;
        }
        for (i, m) in self.scenario.manual_records.iter().enumerate() {
            self.queue.schedule(SimTime(m.at), Action::ManualInsert { sdcc: m.sdcc, record: i })?;
        }
        Ok(())
    }

    fn into_outcome(self) -> RunOutcome {
        let final_state = FinalState {
            seed: self.seed,
            sdcc_outboxes: self
                .sdccs
                .iter()
                .map(|(id, s)| (*id, s.outbox.iter().copied().collect()))
                .collect(),
            map_buffers: self
                .maps
                .iter()
                .map(|(id, m)| (*id, m.buffer.iter().copied().collect()))
                .collect(),
            dpc_held: self
                .dpcs
                .iter()
                .map(|(id, d)| (*id, d.held.values().map(|h| h.report).collect()))
                .collect(),
            cdc_archives: self.cdcs.iter().map(|(id, c)| (*id, c.archive.clone())).collect(),
            emitted: self.reports.keys().copied().collect(),
            delivered: self.delivered,
            dropped: self.dropped,
        };
        let metrics = compute_metrics(self.trace.events(), &self.scenario);
        RunOutcome {
            trace: self.trace,
            metrics,
            final_state,
            events_fired: self.queue.fired(),
        }
    }

    // ------------------------------------------------------------------
    // Dispatch
    // ------------------------------------------------------------------

    fn handle(&mut self, ev: ScheduledEvent) -> Result<(), SimError> {
        match ev.action {
            Action::SensorSample { sensor, index } => self.on_sensor_sample(sensor, index),
            Action::DetectionArrival { sdcc, detection } => {
                if let Some(s) = self.sdccs.get_mut(&sdcc) {
                    s.detections.push(detection);
                }
                Ok(())
            }
            Action::SdccWindowClose { sdcc, index } => self.on_window_close(sdcc, index),
            Action::ManualInsert { sdcc, record } => self.on_manual_insert(sdcc, record),
            Action::MapWaypointArrival { map } => self.on_waypoint_arrival(map),
            Action::ContactCheckTick { index } => self.on_contact_tick(index),
            Action::TransferComplete { transfer } => self.on_direct_complete(transfer),
            Action::DpcProcessComplete { dpc, report } => self.on_dpc_process(dpc, report),
            Action::DpcPeerSummary { dpc, origin_area, payload } => {
                self.on_peer_summary(dpc, origin_area, payload)
            }
            Action::DpcReprocessDeadline { dpc, area, kind } => {
                self.on_reprocess_deadline(dpc, area, kind)
            }
            Action::CdcDecision { cdc, report } => self.on_cdc_decision(cdc, report),
            Action::DccDisseminationStart { report } => self.on_dissemination_start(report),
            Action::DccDisseminationComplete { report, channel } => {
                self.on_dissemination_complete(report, channel)
            }
            Action::EmergencyCallDue { origin, report } => self.on_emergency_call(origin, report),
            Action::HazardOnset { event } => {
                self.active_hazards.insert(event);
                Ok(())
            }
            Action::HazardEnd { event } => {
                self.active_hazards.remove(&event);
                Ok(())
            }
            Action::SensorFailure { sensor } => self.on_sensor_failure(sensor),
        }
    }

    // ------------------------------------------------------------------
    // Level one
    // ------------------------------------------------------------------

    fn on_sensor_sample(&mut self, sensor: SensorId, index: u64) -> Result<(), SimError> {
        let now = self.queue.clock();
        let sigma = self.scenario.hazards.background_noise_sigma;
        let (period, detection) = {
            let Some(s) = self.sensors.get_mut(&sensor) else { return Ok(()) };
            if !s.alive {
                return Ok(()); // failed sensors stop sampling
            }
            // with a silent field and no noise the value is exactly zero;
            // skip the field evaluation but keep the schedule alive
            let quiet = sigma == 0.0 && self.active_hazards.is_empty();
            let det = if quiet && s.detect_threshold > 0.0 {
                None
            } else {
                let draw = if sigma > 0.0 { s.rng.normal() } else { 0.0 };
                level_one::sample(s, &self.scenario.hazards, now, draw)
            };
            (s.sample_period, det)
        };

        if let Some(det) = detection {
            let home = self.sensors[&sensor].home_sdcc;
            self.trace.push(TraceEvent {
                t: now,
                kind: TraceKind::Detection,
                actor: ActorId::Sensor(sensor),
                report: None,
                detail: detail(json!({
                    "sdcc": home,
                    "value": det.value,
                    "modality": det.modality,
                    "hazard": det.hazard,
                })),
            })?;
            // two relay legs: member to cluster head, head to SDCC
            let arrival = now.offset(2.0 * self.scenario.params.hop_delay);
            self.queue.schedule(arrival, Action::DetectionArrival { sdcc: home, detection: det })?;
        }

        let next = SimTime((index + 1) as f64 * period);
        if next <= self.horizon {
            self.queue.schedule(next, Action::SensorSample { sensor, index: index + 1 })?;
        }
        Ok(())
    }

    fn on_window_close(&mut self, sdcc: SdccId, index: u64) -> Result<(), SimError> {
        let now = self.queue.clock();
        let report = {
            let Some(s) = self.sdccs.get_mut(&sdcc) else { return Ok(()) };
            let ctx = AggregateCtx {
                sensors: &self.sensors,
                kind_hint: self.area_hint[&sdcc],
                severity: &self.severity,
                now,
                report_id: self.next_report_id,
                report_size_bytes: self.scenario.params.report_size_bytes,
            };
            sdcc_aggregate(s, &ctx)
        };

        if let Some(report) = report {
            self.next_report_id += 1;
            self.trace.push(TraceEvent {
                t: now,
                kind: TraceKind::ReportEmitted,
                actor: ActorId::Sdcc(sdcc),
                report: Some(report.id),
                detail: detail(json!({
                    "sdcc": sdcc,
                    "k": report.payload.k(),
                    "kind_hypothesis": report.payload.kind_hypothesis,
                    "intensity": report.payload.intensity,
                    "severity": report.severity,
                    "size_bytes": report.size_bytes,
                    "hazards": report.payload.hazard_ids,
                })),
            })?;
            let id = report.id;
            self.reports.insert(id, report);
            self.sdccs.get_mut(&sdcc).unwrap().outbox.push_back(id);
            self.start_direct(sdcc)?;
        }

        let window = self.sdccs[&sdcc].window;
        let next = SimTime((index + 1) as f64 * window);
        if next <= self.horizon {
            self.queue.schedule(next, Action::SdccWindowClose { sdcc, index: index + 1 })?;
        }
        Ok(())
    }

    fn on_manual_insert(&mut self, sdcc: SdccId, record: usize) -> Result<(), SimError> {
        let now = self.queue.clock();
        let spec = self.scenario.manual_records[record].clone();
        let Some(s) = self.sdccs.get_mut(&sdcc) else { return Ok(()) };
        let id = self.next_report_id;
        self.next_report_id += 1;
        let report = Report {
            id,
            kind: ReportKind::ManualRecord,
            origin_area: s.area.clone(),
            created_at: now,
            size_bytes: spec.size_bytes,
            severity: Severity::Routine,
            payload: ReportPayload {
                sensor_ids: BTreeSet::new(),
                modalities: BTreeSet::new(),
                intensity: 0.0,
                epicenter_estimate: None,
                kind_hypothesis: self.area_hint[&sdcc],
                low_confidence: false,
                hazard_ids: BTreeSet::new(),
            },
            provenance: vec![(ActorId::Sdcc(sdcc), now)],
            confidence: None,
        };
        sdcc_insert_manual(s, &report).expect("manual record kind");
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::ReportEmitted,
            actor: ActorId::Sdcc(sdcc),
            report: Some(id),
            detail: detail(json!({
                "sdcc": sdcc,
                "kind": "manual_record",
                "label": spec.label,
                "size_bytes": spec.size_bytes,
            })),
        })?;
        self.reports.insert(id, report);
        self.start_direct(sdcc)?;
        Ok(())
    }

    fn on_sensor_failure(&mut self, sensor: SensorId) -> Result<(), SimError> {
        let now = self.queue.clock();
        let (home, cluster_id) = {
            let Some(s) = self.sensors.get_mut(&sensor) else { return Ok(()) };
            if !s.alive {
                return Ok(());
            }
            s.alive = false;
            (s.home_sdcc, s.cluster)
        };
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::SensorFailure,
            actor: ActorId::Sensor(sensor),
            report: None,
            detail: detail(json!({ "sdcc": home })),
        })?;
        if let Some(cid) = cluster_id {
            let sdcc_pos = self.sdccs[&home].position;
            let dissolve = match self.clusters.get_mut(&cid) {
                Some(c) => !reelect_head(c, sensor, &self.sensors, sdcc_pos),
                None => false,
            };
            if dissolve {
                self.clusters.remove(&cid);
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Direct links
    // ------------------------------------------------------------------

    /// Start the next outbox report on the SDCC's direct link, if it has
    /// one and the link is idle. Ferry SDCCs are served by contact ticks.
    fn start_direct(&mut self, sdcc: SdccId) -> Result<(), SimError> {
        let Some(&dpc) = self.direct_to.get(&sdcc) else { return Ok(()) };
        let now = self.queue.clock();
        if self.direct_busy.get(&sdcc).copied().unwrap_or(SimTime::ZERO) > now {
            return Ok(());
        }
        let Some(&head) = self.sdccs[&sdcc].outbox.front() else { return Ok(()) };
        let size = self.reports[&head].size_bytes;
        let dur = transfer_duration_secs(size, self.direct_rate[&sdcc]);
        let done_at = now.offset(dur);
        let id = self.next_transfer;
        self.next_transfer += 1;
        self.pending_direct
            .insert(id, DirectTransfer { report: head, sdcc, dpc, started_at: now });
        self.direct_busy.insert(sdcc, done_at);
        self.queue.schedule(done_at, Action::TransferComplete { transfer: id })?;
        Ok(())
    }

    fn on_direct_complete(&mut self, transfer: u64) -> Result<(), SimError> {
        let Some(tr) = self.pending_direct.remove(&transfer) else { return Ok(()) };
        let now = self.queue.clock();
        let popped = self.sdccs.get_mut(&tr.sdcc).unwrap().outbox.pop_front();
        debug_assert_eq!(popped, Some(tr.report));
        let size = self.reports[&tr.report].size_bytes;
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::TransferComplete,
            actor: ActorId::Dpc(tr.dpc),
            report: Some(tr.report),
            detail: detail(json!({
                "from": ActorId::Sdcc(tr.sdcc).to_string(),
                "to": ActorId::Dpc(tr.dpc).to_string(),
                "bytes": size,
                "started_at": tr.started_at,
                "link": "direct",
            })),
        })?;
        self.deliver_to_dpc(tr.report, tr.dpc)?;
        self.start_direct(tr.sdcc)?;
        Ok(())
    }

    // ------------------------------------------------------------------
    // Contacts and ferry transfers
    // ------------------------------------------------------------------

    fn on_contact_tick(&mut self, index: u64) -> Result<(), SimError> {
        let now = self.queue.clock();
        let tick = self.scenario.params.contact_tick;

        let map_snaps: Vec<MapSnapshot> = self
            .maps
            .values()
            .map(|m| MapSnapshot {
                id: m.id,
                position: m.position_at(now),
                range_m: m.radio.range_m,
                channels: m.radio.channels,
                rate_eff_bps: m.radio.effective_rate_bps(),
            })
            .collect();
        let mut end_snaps: Vec<EndSnapshot> = Vec::new();
        for (id, s) in &self.sdccs {
            let r = &self.sdcc_radio[id];
            end_snaps.push(EndSnapshot {
                end: ContactEnd::Sdcc(*id),
                position: s.position,
                range_m: r.range_m,
                channels: r.channels,
                rate_eff_bps: r.effective_rate_bps(),
            });
        }
        for (id, d) in &self.dpcs {
            let r = &self.dpc_radio[id];
            end_snaps.push(EndSnapshot {
                end: ContactEnd::Dpc(*id),
                position: d.position,
                range_m: r.range_m,
                channels: r.channels,
                rate_eff_bps: r.effective_rate_bps(),
            });
        }

        let open_keys: BTreeSet<(MapId, ContactEnd)> = self.contacts.keys().copied().collect();
        let delta = crate::level_two::check_contacts(&map_snaps, &end_snaps, &open_keys);

        // out-of-range contacts close first; an interrupted transfer loses
        // its progress and the report stays queued at its source
        for key in &delta.closes {
            let Some(contact) = self.contacts.remove(key) else { continue };
            if let Some(active) = &contact.active {
                if matches!(contact.end, ContactEnd::Sdcc(_)) {
                    // release the pickup reservation
                    let size = self.reports[&active.report].size_bytes;
                    let m = self.maps.get_mut(&contact.map).unwrap();
                    m.buffered_bytes = m.buffered_bytes.saturating_sub(size);
                }
            }
            self.trace.push(TraceEvent {
                t: now,
                kind: TraceKind::ContactClose,
                actor: ActorId::Map(contact.map),
                report: None,
                detail: detail(json!({
                    "map": contact.map,
                    "end": contact.end.to_string(),
                    "open_secs": now.seconds() - contact.opened_at.seconds(),
                    "aborted_transfer": contact.active.as_ref().map(|a| a.report),
                })),
            })?;
        }

        // move bytes on contacts that existed for the whole tick
        let mut completions: Vec<((MapId, ContactEnd), ReportId, SimTime)> = Vec::new();
        for (key, contact) in self.contacts.iter_mut() {
            if contact.opened_at >= now {
                continue;
            }
            let Some(active) = &mut contact.active else { continue };
            let size = self.reports[&active.report].size_bytes as f64;
            let remaining = size - active.bytes_done;
            active.bytes_done += transfer_chunk(remaining, contact.rate_bps, tick, f64::INFINITY);
            if active.bytes_done >= size - 1e-6 {
                completions.push((*key, active.report, active.started_at));
                contact.active = None;
            }
        }
        for (key, report, started_at) in completions {
            self.complete_contact_transfer(key, report, started_at)?;
        }

        for (map, end, rate) in &delta.opens {
            self.contacts.insert(
                (*map, *end),
                Contact { map: *map, end: *end, opened_at: now, rate_bps: *rate, active: None },
            );
            self.trace.push(TraceEvent {
                t: now,
                kind: TraceKind::ContactOpen,
                actor: ActorId::Map(*map),
                report: None,
                detail: detail(json!({
                    "map": map,
                    "end": end.to_string(),
                    "rate_bps": rate,
                })),
            })?;
        }

        self.assign_contact_transfers(now)?;

        let next = SimTime((index + 1) as f64 * tick);
        if next <= self.horizon {
            self.queue.schedule(next, Action::ContactCheckTick { index: index + 1 })?;
        }
        Ok(())
    }

    fn complete_contact_transfer(
        &mut self,
        key: (MapId, ContactEnd),
        report: ReportId,
        started_at: SimTime,
    ) -> Result<(), SimError> {
        let now = self.queue.clock();
        let (map_id, end) = key;
        let size = self.reports[&report].size_bytes;
        match end {
            ContactEnd::Sdcc(sdcc) => {
                // pickup: outbox head moves into the ferry buffer
                let s = self.sdccs.get_mut(&sdcc).unwrap();
                let pos = s.outbox.iter().position(|r| *r == report).expect("report queued");
                s.outbox.remove(pos);
                let m = self.maps.get_mut(&map_id).unwrap();
                m.buffer.push_back(report); // bytes were reserved at start
                self.trace.push(TraceEvent {
                    t: now,
                    kind: TraceKind::TransferComplete,
                    actor: ActorId::Map(map_id),
                    report: Some(report),
                    detail: detail(json!({
                        "from": ActorId::Sdcc(sdcc).to_string(),
                        "to": ActorId::Map(map_id).to_string(),
                        "bytes": size,
                        "started_at": started_at,
                        "link": "contact",
                    })),
                })?;
                let r = self.reports.get_mut(&report).unwrap();
                r.provenance.push((ActorId::Map(map_id), now));
                self.maybe_bypass(report, ActorId::Map(map_id))?;
            }
            ContactEnd::Dpc(dpc) => {
                let m = self.maps.get_mut(&map_id).unwrap();
                let pos = m.buffer.iter().position(|r| *r == report).expect("report buffered");
                m.buffer.remove(pos);
                m.buffered_bytes = m.buffered_bytes.saturating_sub(size);
                self.trace.push(TraceEvent {
                    t: now,
                    kind: TraceKind::TransferComplete,
                    actor: ActorId::Dpc(dpc),
                    report: Some(report),
                    detail: detail(json!({
                        "from": ActorId::Map(map_id).to_string(),
                        "to": ActorId::Dpc(dpc).to_string(),
                        "bytes": size,
                        "started_at": started_at,
                        "link": "contact",
                    })),
                })?;
                self.deliver_to_dpc(report, dpc)?;
            }
        }
        Ok(())
    }

    /// Put idle open contacts to work. Pickups honor strict outbox FIFO:
    /// only the first report not already in flight may start, on the oldest
    /// idle contact that can hold it. Deliveries take the first buffered
    /// report whose origin SDCC is paired with the contact's DPC.
    fn assign_contact_transfers(&mut self, now: SimTime) -> Result<(), SimError> {
        // ---- pickups, per SDCC in id order
        let sdcc_ids: Vec<SdccId> = self.sdccs.keys().copied().collect();
        for sdcc in sdcc_ids {
            if self.direct_to.contains_key(&sdcc) {
                continue; // direct-link SDCCs never use the ferry
            }
            let mut idle: Vec<(SimTime, MapId)> = self
                .contacts
                .values()
                .filter(|c| c.end == ContactEnd::Sdcc(sdcc) && c.active.is_none())
                .map(|c| (c.opened_at, c.map))
                .collect();
            idle.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

            for (_, map_id) in idle {
                loop {
                    let in_flight: BTreeSet<ReportId> = self
                        .contacts
                        .values()
                        .filter(|c| c.end == ContactEnd::Sdcc(sdcc))
                        .filter_map(|c| c.active.as_ref().map(|a| a.report))
                        .collect();
                    let Some(&head) = self
                        .sdccs[&sdcc]
                        .outbox
                        .iter()
                        .find(|r| !in_flight.contains(r))
                    else {
                        break;
                    };
                    let size = self.reports[&head].size_bytes;
                    let m = &self.maps[&map_id];
                    if size > m.buffer_capacity {
                        // can never fit this ferry; discard rather than
                        // wedge the queue forever
                        let capacity = m.buffer_capacity;
                        let s = self.sdccs.get_mut(&sdcc).unwrap();
                        let pos = s.outbox.iter().position(|r| *r == head).unwrap();
                        s.outbox.remove(pos);
                        self.dropped.insert(head);
                        self.trace.push(TraceEvent {
                            t: now,
                            kind: TraceKind::ReportDropped,
                            actor: ActorId::Sdcc(sdcc),
                            report: Some(head),
                            detail: detail(json!({
                                "reason": "oversize",
                                "map": map_id,
                                "size_bytes": size,
                                "capacity": capacity,
                            })),
                        })?;
                        continue; // consider the next report for this contact
                    }
                    if size > m.free_capacity() {
                        break; // ferry is full for now; FIFO head waits
                    }
                    let m = self.maps.get_mut(&map_id).unwrap();
                    m.buffered_bytes += size; // reserve the whole report
                    let contact = self.contacts.get_mut(&(map_id, ContactEnd::Sdcc(sdcc))).unwrap();
                    contact.active = Some(crate::level_two::ActiveTransfer {
                        report: head,
                        bytes_done: 0.0,
                        started_at: now,
                    });
                    break;
                }
            }
        }

        // ---- deliveries, oldest contact first per map
        let delivery_keys: Vec<(SimTime, MapId, ContactEnd)> = {
            let mut v: Vec<_> = self
                .contacts
                .values()
                .filter(|c| matches!(c.end, ContactEnd::Dpc(_)) && c.active.is_none())
                .map(|c| (c.opened_at, c.map, c.end))
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            v
        };
        for (_, map_id, end) in delivery_keys {
            let ContactEnd::Dpc(dpc) = end else { continue };
            let outgoing: BTreeSet<ReportId> = self
                .contacts
                .values()
                .filter(|c| c.map == map_id)
                .filter_map(|c| c.active.as_ref().map(|a| a.report))
                .collect();
            let candidate = self.maps[&map_id].buffer.iter().copied().find(|r| {
                if outgoing.contains(r) {
                    return false;
                }
                match self.reports[r].origin_sdcc() {
                    Some(origin) => self.pairs.contains(&(origin, dpc)),
                    None => false,
                }
            });
            if let Some(report) = candidate {
                let contact = self.contacts.get_mut(&(map_id, end)).unwrap();
                contact.active = Some(crate::level_two::ActiveTransfer {
                    report,
                    bytes_done: 0.0,
                    started_at: now,
                });
            }
        }
        Ok(())
    }

    fn on_waypoint_arrival(&mut self, map: MapId) -> Result<(), SimError> {
        let now = self.queue.clock();
        let Some(m) = self.maps.get_mut(&map) else { return Ok(()) };
        if let Some((leg, at)) = next_waypoint_arrival(&m.route, m.speed, m.phase, now) {
            m.current_leg = leg;
            // the residual distance to a waypoint can round below the
            // clock's resolution; nudge past it or the event re-fires at
            // the same instant forever
            let at = if at > now { at } else { now.offset(1e-6) };
            if at <= self.horizon {
                self.queue.schedule(at, Action::MapWaypointArrival { map })?;
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Level three
    // ------------------------------------------------------------------

    fn deliver_to_dpc(&mut self, report: ReportId, dpc: DpcId) -> Result<(), SimError> {
        let now = self.queue.clock();
        self.delivered.insert(report);
        let r = self.reports.get_mut(&report).unwrap();
        r.provenance.push((ActorId::Dpc(dpc), now));
        self.maybe_bypass(report, ActorId::Dpc(dpc))?;
        self.queue.schedule(now, Action::DpcProcessComplete { dpc, report })?;
        Ok(())
    }

    /// Emergency-severity reports trigger one phone call from the first
    /// MAP or DPC that receives them; the report itself stays on the
    /// normal path.
    fn maybe_bypass(&mut self, report: ReportId, origin: ActorId) -> Result<(), SimError> {
        let r = &self.reports[&report];
        if bypass_gate(r).is_err() || self.bypass_called.contains(&report) {
            return Ok(());
        }
        self.bypass_called.insert(report);
        let at = self.queue.clock().offset(self.scenario.params.emergency_call_latency);
        self.queue.schedule(at, Action::EmergencyCallDue { origin, report })?;
        Ok(())
    }

    fn confidence_ctx(&self, origin_sdcc: Option<SdccId>, k: usize) -> ConfidenceCtx {
        let (tau, alive, modalities) = match origin_sdcc {
            Some(id) => {
                let alive = self
                    .sensors
                    .values()
                    .filter(|s| s.home_sdcc == id && s.alive)
                    .count() as u32;
                (
                    self.sdccs[&id].tau,
                    alive,
                    self.modalities_deployed[&id],
                )
            }
            None => (1, 0, 1),
        };
        // a report can cite more sensors than are currently alive (deaths
        // after the window); never let the population fall below either
        ConfidenceCtx { tau: tau.max(1), alive: alive.max(k as u32).max(1), modalities_deployed: modalities }
    }

    fn forward_to_cdc(&mut self, report: ReportId) -> Result<(), SimError> {
        let at = self.queue.clock().offset(self.scenario.params.dpc_to_cdc_latency);
        self.queue.schedule(at, Action::CdcDecision { cdc: self.target_cdc, report })?;
        Ok(())
    }

    fn hold_report(
        &mut self,
        dpc: DpcId,
        report: ReportId,
        retries: u32,
        conf: f64,
    ) -> Result<(), SimError> {
        let now = self.queue.clock();
        let (area, kind) = {
            let r = &self.reports[&report];
            (r.origin_area.clone(), r.payload.kind_hypothesis)
        };
        let wait = self.dpcs[&dpc].reprocess_wait;
        let deadline = now.offset(wait);
        self.dpcs
            .get_mut(&dpc)
            .unwrap()
            .held
            .insert((area.clone(), kind), HeldReport { report, retries, deadline });
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::DpcDisposition,
            actor: ActorId::Dpc(dpc),
            report: Some(report),
            detail: detail(json!({
                "disposition": Disposition::Reprocess,
                "confidence": conf,
                "retries": retries,
                "hazards": self.reports[&report].payload.hazard_ids,
            })),
        })?;
        self.queue
            .schedule(deadline, Action::DpcReprocessDeadline { dpc, area: area.clone(), kind })?;
        // ask peers for corroborating observations
        let peers = self.dpcs[&dpc].peers.clone();
        let payload = self.reports[&report].payload.clone();
        let at = now.offset(self.scenario.params.inter_dpc_latency);
        for peer in peers {
            self.queue.schedule(
                at,
                Action::DpcPeerSummary { dpc: peer, origin_area: area.clone(), payload: payload.clone() },
            )?;
        }
        Ok(())
    }

    fn promote_and_forward(
        &mut self,
        dpc: DpcId,
        report: ReportId,
        conf: f64,
        flagged: bool,
    ) -> Result<(), SimError> {
        let now = self.queue.clock();
        let r = self.reports.get_mut(&report).unwrap();
        promote(r, conf, flagged);
        let disposition = if flagged { Disposition::ForwardFlagged } else { Disposition::Forward };
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::DpcDisposition,
            actor: ActorId::Dpc(dpc),
            report: Some(report),
            detail: detail(json!({
                "disposition": disposition,
                "confidence": conf,
                "hazards": self.reports[&report].payload.hazard_ids,
            })),
        })?;
        self.forward_to_cdc(report)
    }

    fn on_dpc_process(&mut self, dpc: DpcId, report: ReportId) -> Result<(), SimError> {
        let now = self.queue.clock();
        let kind = self.reports[&report].kind;

        if kind == ReportKind::ManualRecord {
            // archival data rides through unchanged
            self.trace.push(TraceEvent {
                t: now,
                kind: TraceKind::DpcDisposition,
                actor: ActorId::Dpc(dpc),
                report: Some(report),
                detail: detail(json!({
                    "disposition": Disposition::Forward,
                    "kind": "manual_record",
                })),
            })?;
            return self.forward_to_cdc(report);
        }

        let (area, hypothesis) = {
            let r = &self.reports[&report];
            (r.origin_area.clone(), r.payload.kind_hypothesis)
        };

        // a held report for the same (area, kind) absorbs newcomers
        if let Some(held) = self.dpcs[&dpc].held.get(&(area.clone(), hypothesis)) {
            let held_id = held.report;
            self.merge_into_held(dpc, held_id, report, "report")?;
            return Ok(());
        }

        let (conf, disposition) = {
            let r = &self.reports[&report];
            let ctx = self.confidence_ctx(r.origin_sdcc(), r.payload.k());
            let d = &self.dpcs[&dpc];
            let conf = confidence(&r.payload, ctx, &d.history, &area);
            (conf, dpc_process(d, conf, 0))
        };
        match disposition {
            Disposition::Forward => self.promote_and_forward(dpc, report, conf, false),
            Disposition::ForwardFlagged => self.promote_and_forward(dpc, report, conf, true),
            Disposition::Reprocess => self.hold_report(dpc, report, 0, conf),
        }
    }

    fn merge_into_held(
        &mut self,
        dpc: DpcId,
        held_id: ReportId,
        incoming: ReportId,
        source: &str,
    ) -> Result<(), SimError> {
        let now = self.queue.clock();
        let payload = self.reports[&incoming].payload.clone();
        self.merge_payload_into(held_id, &payload);
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::DpcDisposition,
            actor: ActorId::Dpc(dpc),
            report: Some(incoming),
            detail: detail(json!({
                "disposition": "merged",
                "into": held_id,
                "source": source,
                "hazards": payload.hazard_ids,
            })),
        })?;
        Ok(())
    }

    fn merge_payload_into(&mut self, held_id: ReportId, incoming: &ReportPayload) {
        let held = self.reports.get_mut(&held_id).unwrap();
        merge_payload(&mut held.payload, incoming);
        // intensity only grows under merging, so re-grading never lowers
        // the severity
        held.severity = self
            .severity
            .grade(held.payload.kind_hypothesis, held.payload.intensity)
            .max(held.severity);
    }

    fn on_peer_summary(
        &mut self,
        dpc: DpcId,
        origin_area: AreaId,
        payload: ReportPayload,
    ) -> Result<(), SimError> {
        let now = self.queue.clock();
        let Some(d) = self.dpcs.get(&dpc) else { return Ok(()) };
        let Some(held) = d.held.get(&(origin_area, payload.kind_hypothesis)) else {
            return Ok(()); // nothing waiting; the summary is just noise
        };
        let held_id = held.report;
        self.merge_payload_into(held_id, &payload);
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::DpcDisposition,
            actor: ActorId::Dpc(dpc),
            report: Some(held_id),
            detail: detail(json!({
                "disposition": "merged",
                "into": held_id,
                "source": "peer_summary",
                "hazards": payload.hazard_ids,
            })),
        })?;
        Ok(())
    }

    fn on_reprocess_deadline(
        &mut self,
        dpc: DpcId,
        area: AreaId,
        kind: HazardKind,
    ) -> Result<(), SimError> {
        let Some(held) = self.dpcs.get_mut(&dpc).and_then(|d| d.held.remove(&(area.clone(), kind)))
        else {
            return Ok(());
        };
        let report = held.report;
        let retries = held.retries + 1;
        let (conf, disposition) = {
            let r = &self.reports[&report];
            let ctx = self.confidence_ctx(r.origin_sdcc(), r.payload.k());
            let d = &self.dpcs[&dpc];
            let conf = confidence(&r.payload, ctx, &d.history, &r.origin_area);
            (conf, dpc_process(d, conf, retries))
        };
        match disposition {
            Disposition::Forward => self.promote_and_forward(dpc, report, conf, false),
            Disposition::ForwardFlagged => self.promote_and_forward(dpc, report, conf, true),
            Disposition::Reprocess => self.hold_report(dpc, report, retries, conf),
        }
    }

    // ------------------------------------------------------------------
    // Level four
    // ------------------------------------------------------------------

    fn on_cdc_decision(&mut self, cdc: CdcId, report: ReportId) -> Result<(), SimError> {
        let now = self.queue.clock();
        {
            let r = self.reports.get_mut(&report).unwrap();
            r.provenance.push((ActorId::Cdc(cdc), now));
        }
        let r = &self.reports[&report];
        if r.kind == ReportKind::ManualRecord {
            let Some(c) = self.cdcs.get_mut(&cdc) else { return Ok(()) };
            c.archive.push(report);
            self.trace.push(TraceEvent {
                t: now,
                kind: TraceKind::CdcDecision,
                actor: ActorId::Cdc(cdc),
                report: Some(report),
                detail: detail(json!({
                    "decision": "archive",
                    "kind": "manual_record",
                })),
            })?;
            return Ok(());
        }

        let decision = {
            let c = self.cdcs.get_mut(&cdc).unwrap();
            cdc_decide(c, r, now).expect("only processed reports are forwarded")
        };
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::CdcDecision,
            actor: ActorId::Cdc(cdc),
            report: Some(report),
            detail: detail(json!({
                "similarity": decision.similarity,
                "decision": if decision.warn { "warn" } else { "archive" },
                "kind": decision.kind,
                "hazards": r.payload.hazard_ids,
            })),
        })?;
        if decision.warn {
            let at = now.offset(self.scenario.params.cdc_to_dcc_latency);
            self.queue.schedule(at, Action::DccDisseminationStart { report })?;
        }
        Ok(())
    }

    fn on_dissemination_start(&mut self, report: ReportId) -> Result<(), SimError> {
        let now = self.queue.clock();
        let (area, kind, severity, hazards) = {
            let r = &self.reports[&report];
            (
                r.origin_area.clone(),
                r.payload.kind_hypothesis,
                r.severity,
                r.payload.hazard_ids.clone(),
            )
        };
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::WarningIssued,
            actor: ActorId::Dcc,
            report: Some(report),
            detail: detail(json!({
                "area": area,
                "kind": kind,
                "severity": severity,
                "hazards": hazards,
            })),
        })?;
        // subscriber coverage is validated up front
        let completions = dcc_disseminate(&self.dcc, &area, now).expect("area has subscribers");
        for (channel, done) in completions {
            self.queue
                .schedule(done, Action::DccDisseminationComplete { report, channel })?;
        }
        Ok(())
    }

    fn on_dissemination_complete(
        &mut self,
        report: ReportId,
        channel: WarningChannel,
    ) -> Result<(), SimError> {
        let now = self.queue.clock();
        let area = self.reports[&report].origin_area.clone();
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::DisseminationComplete,
            actor: ActorId::Dcc,
            report: Some(report),
            detail: detail(json!({
                "channel": channel,
                "area": area,
            })),
        })?;
        Ok(())
    }

    fn on_emergency_call(&mut self, origin: ActorId, report: ReportId) -> Result<(), SimError> {
        let now = self.queue.clock();
        let r = &self.reports[&report];
        self.trace.push(TraceEvent {
            t: now,
            kind: TraceKind::EmergencyCall,
            actor: origin,
            report: Some(report),
            detail: detail(json!({
                "severity": r.severity,
                "area": r.origin_area,
                "hazards": r.payload.hazard_ids,
            })),
        })?;
        Ok(())
    }
}

// ============================================================================
// Tests
// ============================================================================
