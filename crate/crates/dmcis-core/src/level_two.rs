//! Transport tier: radio profiles, mobile access points (MAPs) that ferry
//! reports between centers, contact management and fleet sizing.
//!
//! A MAP patrols a cyclic waypoint route. Whenever it comes within radio
//! range of an SDCC it drains that SDCC's outbox; within range of a DPC it
//! delivers everything addressed to it. Centers whose paired DPC sits closer
//! than the direct-link threshold skip the ferry entirely.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{
    distance, AreaId, DpcId, MapId, Position, ReportId, SdccId, SimTime, Violation,
};

// ============================================================================
// Radio profiles
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadioStandard {
    B,
    G,
    A,
}

impl std::fmt::Display for RadioStandard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RadioStandard::B => f.write_str("b"),
            RadioStandard::G => f.write_str("g"),
            RadioStandard::A => f.write_str("a"),
        }
    }
}

/// Link characteristics for one radio standard.
///
/// Nominal rate and channel count are properties of the standard itself:
/// 11 Mbit/s on 3 channels for b, 54 Mbit/s on 3 channels for g, and
/// 54 Mbit/s on 12 non-overlapping channels for a. Range and efficiency are
/// deployment parameters; a trades range for its channel count, so its
/// default range is the shortest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioProfile {
    pub standard: RadioStandard,
    pub nominal_rate_bps: f64,
    pub channels: u32,
    pub range_m: f64,
    /// Fraction of the nominal rate actually achieved end to end.
    pub efficiency: f64,
}

impl RadioProfile {
    pub fn new(standard: RadioStandard, range_m: f64, efficiency: f64) -> Self {
        let (nominal_rate_bps, channels) = match standard {
            RadioStandard::B => (11e6, 3),
            RadioStandard::G => (54e6, 3),
            RadioStandard::A => (54e6, 12),
        };
        RadioProfile { standard, nominal_rate_bps, channels, range_m, efficiency }
    }

    pub fn default_range_m(standard: RadioStandard) -> f64 {
        match standard {
            RadioStandard::B | RadioStandard::G => 250.0,
            RadioStandard::A => 150.0,
        }
    }

    pub fn effective_rate_bps(&self) -> f64 {
        self.nominal_rate_bps * self.efficiency
    }
}

/// Seconds to move a whole report at the given effective rate.
pub fn transfer_duration_secs(size_bytes: u64, rate_bps: f64) -> f64 {
    size_bytes as f64 * 8.0 / rate_bps
}

/// Bytes moved during one step: limited by what is left, by the link rate
/// over `dt`, and by free space at the destination.
pub fn transfer_chunk(remaining: f64, rate_bps: f64, dt: f64, dest_free: f64) -> f64 {
    (rate_bps * dt / 8.0).min(remaining).min(dest_free).max(0.0)
}

// ============================================================================
// MAP nodes and mobility
// ============================================================================

/// Mobile access point: a vehicle-mounted relay with a store-and-forward
/// buffer. Runtime state; built from the scenario at load.
#[derive(Debug, Clone)]
pub struct MapNode {
    pub id: MapId,
    pub area: AreaId,
    /// Cyclic patrol route, at least two waypoints.
    pub route: Vec<Position>,
    /// Meters per second, strictly positive.
    pub speed: f64,
    /// Starting offset along the route as a fraction of one lap. Staggering
    /// phases lets a fleet share one route without moving in lockstep.
    pub phase: f64,
    pub buffer_capacity: u64,
    pub buffer: VecDeque<ReportId>,
    pub buffered_bytes: u64,
    pub radio: RadioProfile,
    /// Route leg currently being driven; bookkeeping updated on waypoint
    /// arrival events. Position itself is always computed from time.
    pub current_leg: usize,
}

impl MapNode {
    pub fn position_at(&self, t: SimTime) -> Position {
        map_position(&self.route, self.speed, self.phase, t)
    }

    pub fn free_capacity(&self) -> u64 {
        self.buffer_capacity.saturating_sub(self.buffered_bytes)
    }
}

fn route_leg_lengths(route: &[Position]) -> Vec<f64> {
    (0..route.len())
        .map(|i| distance(route[i], route[(i + 1) % route.len()]))
        .collect()
}

/// Position along a cyclic waypoint route at time `t`, moving at constant
/// speed with an optional phase offset. A degenerate route (all waypoints
/// coincident) pins the node to the first waypoint.
pub fn map_position(route: &[Position], speed: f64, phase: f64, t: SimTime) -> Position {
    assert!(route.len() >= 2, "route needs at least two waypoints");
    let legs = route_leg_lengths(route);
    let lap: f64 = legs.iter().sum();
    if lap == 0.0 {
        return route[0];
    }
    let mut s = (speed * t.seconds() + phase * lap) % lap;
    for (i, leg) in legs.iter().enumerate() {
        if s <= *leg {
            if *leg == 0.0 {
                continue;
            }
            let a = route[i];
            let b = route[(i + 1) % route.len()];
            let f = s / leg;
            return Position::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f);
        }
        s -= leg;
    }
    route[0] // numerically at the very end of the lap
}

/// Leg index being driven at `t` and the time the next waypoint is reached.
/// `None` for a degenerate (zero-length) route.
pub fn next_waypoint_arrival(
    route: &[Position],
    speed: f64,
    phase: f64,
    t: SimTime,
) -> Option<(usize, SimTime)> {
    let legs = route_leg_lengths(route);
    let lap: f64 = legs.iter().sum();
    if lap == 0.0 {
        return None;
    }
    let mut s = (speed * t.seconds() + phase * lap) % lap;
    for (i, leg) in legs.iter().enumerate() {
        if s < *leg {
            let remaining = leg - s;
            return Some((i, t.offset(remaining / speed)));
        }
        s -= leg;
    }
    // exactly at a lap boundary: next arrival is the end of the first
    // non-degenerate leg
    let i = legs.iter().position(|l| *l > 0.0).unwrap();
    Some((i, t.offset(legs[i] / speed)))
}

// ============================================================================
// Direct links
// ============================================================================

/// Whether an SDCC-DPC pair needs the ferry at all. Pairs strictly closer
/// than `delta` (including co-located ones) talk over a permanent direct
/// link instead.
pub fn needs_ferry(sdcc_pos: Position, dpc_pos: Position, delta: f64) -> bool {
    distance(sdcc_pos, dpc_pos) >= delta
}

// ============================================================================
// Contacts
// ============================================================================

/// The fixed end of a contact; the mobile end is always a MAP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactEnd {
    Sdcc(SdccId),
    Dpc(DpcId),
}

impl std::fmt::Display for ContactEnd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ContactEnd::Sdcc(id) => write!(f, "sdcc:{id}"),
            ContactEnd::Dpc(id) => write!(f, "dpc:{id}"),
        }
    }
}

/// An in-progress whole-report move over a contact. Progress is byte
/// counted; losing the contact discards progress and the report restarts
/// from zero at the next opportunity.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTransfer {
    pub report: ReportId,
    pub bytes_done: f64,
    pub started_at: SimTime,
}

/// An open radio association between a MAP and a center.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub map: MapId,
    pub end: ContactEnd,
    pub opened_at: SimTime,
    /// Effective rate of the link, the slower of the two ends.
    pub rate_bps: f64,
    pub active: Option<ActiveTransfer>,
}

/// Geometry and radio summary of one MAP for the contact check.
#[derive(Debug, Clone, Copy)]
pub struct MapSnapshot {
    pub id: MapId,
    pub position: Position,
    pub range_m: f64,
    pub channels: u32,
    pub rate_eff_bps: f64,
}

/// Geometry and radio summary of one fixed center for the contact check.
#[derive(Debug, Clone, Copy)]
pub struct EndSnapshot {
    pub end: ContactEnd,
    pub position: Position,
    pub range_m: f64,
    pub channels: u32,
    pub rate_eff_bps: f64,
}

/// Result of one contact check pass.
#[derive(Debug, Default, PartialEq)]
pub struct ContactDelta {
    pub closes: Vec<(MapId, ContactEnd)>,
    /// New contacts with their negotiated effective rate.
    pub opens: Vec<(MapId, ContactEnd, f64)>,
}

/// Decide which contacts close and open this tick.
///
/// A pair is in range when the distance is at most the shorter of the two
/// radio ranges. Open contacts out of range close first, freeing channels;
/// then in-range pairs open in ascending (map id, end id) order as long as
/// both ends still have a free channel. Pairs beyond capacity simply wait.
pub fn check_contacts(
    maps: &[MapSnapshot],
    ends: &[EndSnapshot],
    open: &BTreeSet<(MapId, ContactEnd)>,
) -> ContactDelta {
    let map_by_id: BTreeMap<MapId, &MapSnapshot> = maps.iter().map(|m| (m.id, m)).collect();
    let end_by_id: BTreeMap<ContactEnd, &EndSnapshot> = ends.iter().map(|e| (e.end, e)).collect();

    let in_range = |m: &MapSnapshot, e: &EndSnapshot| {
        distance(m.position, e.position) <= m.range_m.min(e.range_m)
    };

    let mut delta = ContactDelta::default();
    let mut still_open: BTreeSet<(MapId, ContactEnd)> = BTreeSet::new();
    for key in open {
        let (Some(m), Some(e)) = (map_by_id.get(&key.0), end_by_id.get(&key.1)) else {
            delta.closes.push(*key);
            continue;
        };
        if in_range(m, e) {
            still_open.insert(*key);
        } else {
            delta.closes.push(*key);
        }
    }

    let mut map_load: BTreeMap<MapId, u32> = BTreeMap::new();
    let mut end_load: BTreeMap<ContactEnd, u32> = BTreeMap::new();
    for (m, e) in &still_open {
        *map_load.entry(*m).or_default() += 1;
        *end_load.entry(*e).or_default() += 1;
    }

    for m in maps {
        for e in ends {
            let key = (m.id, e.end);
            if still_open.contains(&key) || !in_range(m, e) {
                continue;
            }
            let ml = map_load.entry(m.id).or_default();
            let el = end_load.entry(e.end).or_default();
            if *ml < m.channels && *el < e.channels {
                *ml += 1;
                *el += 1;
                delta.opens.push((m.id, e.end, m.rate_eff_bps.min(e.rate_eff_bps)));
            }
        }
    }
    delta
}

// ============================================================================
// Fleet sizing
// ============================================================================

/// Per-area deployment counts for fleet validation.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetArea {
    pub area: AreaId,
    pub maps: u32,
    pub sdccs: u32,
    pub dpcs: u32,
    /// False when every assigned SDCC-DPC pair touching the area is inside
    /// the direct-link threshold; such areas need no ferry at all.
    pub ferry_required: bool,
}

pub const EQ2_FLEET: &str = "eq2_map_fleet_insufficient";

/// The ferry fleet of an area must be at least as large as both its SDCC
/// count and its DPC count, unless the area needs no ferrying. SDCC and DPC
/// counts may differ freely.
pub fn validate_fleet(areas: &[FleetArea]) -> Vec<Violation> {
    let mut out = Vec::new();
    for a in areas {
        if !a.ferry_required {
            continue;
        }
        if a.maps < a.sdccs {
            out.push(Violation::new(
                EQ2_FLEET,
                format!(
                    "area {:?} has {} maps for {} sdccs; ferrying needs at least one map per sdcc",
                    a.area, a.maps, a.sdccs
                ),
            ));
        }
        if a.maps < a.dpcs {
            out.push(Violation::new(
                EQ2_FLEET,
                format!(
                    "area {:?} has {} maps for {} dpcs; ferrying needs at least one map per dpc",
                    a.area, a.maps, a.dpcs
                ),
            ));
        }
    }
    out
}

// ============================================================================
// Tests
// ============================================================================
