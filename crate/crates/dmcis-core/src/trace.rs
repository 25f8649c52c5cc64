//! Structured event trace.
//!
//! Every observable thing the simulator does becomes one [`TraceEvent`],
//! serialized as a single JSON line. Field order is fixed and the `detail`
//! map is sorted, so a run's trace is byte-identical given the same
//! scenario and seed. The log enforces non-decreasing timestamps at
//! insertion; a violation is a simulator bug, not an input problem.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActorId, ReportId, SimTime};

// ============================================================================
// Event records
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Detection,
    ReportEmitted,
    ContactOpen,
    ContactClose,
    TransferComplete,
    ReportDropped,
    DpcDisposition,
    CdcDecision,
    WarningIssued,
    DisseminationComplete,
    EmergencyCall,
    SensorFailure,
}

pub type Detail = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    pub kind: TraceKind,
    pub actor: ActorId,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<ReportId>,
    #[serde(default)]
    pub detail: Detail,
}

/// Coerce a `json!({..})` literal into the sorted detail map.
pub fn detail(value: serde_json::Value) -> Detail {
    match value {
        serde_json::Value::Object(map) => map.into_iter().collect(),
        other => panic!("trace detail must be a JSON object, got {other}"),
    }
}

// ============================================================================
// Log
// ============================================================================

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace time went backwards: {attempted} after {prev}")]
    OutOfOrder { prev: SimTime, attempted: SimTime },
    #[error("bad trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn new() -> Self {
        TraceLog::default()
    }

    pub fn push(&mut self, event: TraceEvent) -> Result<(), TraceError> {
        if let Some(last) = self.events.last() {
            if event.t < last.t {
                return Err(TraceError::OutOfOrder { prev: last.t, attempted: event.t });
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e).map_err(|e| TraceError::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("trace is utf-8")
    }
}

/// Parse a JSON Lines trace back into events. Blank lines are ignored;
/// anything else malformed reports its 1-based line number.
pub fn read_jsonl(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(line)
            .map_err(|e| TraceError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(ev);
    }
    Ok(out)
}

// ============================================================================
// Tests
// ============================================================================
