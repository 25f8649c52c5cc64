//! Command implementations behind the `dmcis` binary.
//!
//! Every command is a plain function from parsed arguments to a stdout
//! payload, so behavior is testable without spawning a process. Exit code
//! contract: 0 for success, 1 when the input is well-formed but violates a
//! deployment rule, 2 for unusable input (bad JSON, unknown flags, broken
//! paths, malformed seeds).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dmcis_core::engine::{stream, SimRng};
use dmcis_core::{
    compute_metrics, parse_scenario_value, read_jsonl, run_scenario, validate_scenario,
    RunConfig, Scenario, SimError,
};
use serde_json::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug)]
pub enum CliError {
    /// The scenario parses but breaks a deployment rule.
    Domain(String),
    /// The input itself is unusable.
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Domain(m) | CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

// ============================================================================
// Shared plumbing
// ============================================================================

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_value(path: &Path) -> Result<Value, CliError> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let value = load_value(path)?;
    parse_scenario_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Effective seed override: an explicit flag beats the `DMCIS_SEED`
/// environment variable, which beats the scenario's own seed (`None` here).
/// The variable is only inspected when no flag is given.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env {
        None => Ok(None),
        Some(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| usage(format!("DMCIS_SEED must be an unsigned integer, got `{raw}`"))),
    }
}

fn run_checked(scenario: &Scenario, config: &RunConfig) -> Result<dmcis_core::RunOutcome, CliError> {
    run_scenario(scenario, config).map_err(|e| match e {
        SimError::Invalid(violations) => CliError::Domain(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"),
        ),
        other => CliError::Domain(other.to_string()),
    })
}

// ============================================================================
// validate
// ============================================================================

pub fn cmd_validate(scenario_path: &Path) -> Result<String, CliError> {
    let scenario = load_scenario(scenario_path)?;
    let violations = validate_scenario(&scenario);
    if violations.is_empty() {
        Ok("ok\n".to_owned())
    } else {
        Err(CliError::Domain(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"),
        ))
    }
}

// ============================================================================
// run
// ============================================================================

pub struct RunArgs {
    pub scenario: PathBuf,
    /// Already resolved against the environment; see [`resolve_seed`].
    pub seed: Option<u64>,
    pub until: Option<f64>,
    pub trace: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

pub fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let config = RunConfig { seed: args.seed, until: args.until };
    let out = run_checked(&scenario, &config)?;

    // nothing is written unless the run itself succeeded
    if let Some(path) = &args.trace {
        write_file(path, &out.trace.to_jsonl_string())?;
    }
    if let Some(path) = &args.metrics {
        write_file(path, &out.metrics.to_json_string())?;
        write_file(&path.with_extension("csv"), &out.metrics.to_csv_string())?;
    }

    let s = &out.metrics.summary;
    Ok(format!(
        "seed={} events={} emitted={} delivered={} dropped={} warnings={}\n",
        out.final_state.seed,
        out.events_fired,
        s.emitted_reports,
        s.delivered_reports,
        s.dropped_reports,
        s.warnings_issued,
    ))
}

// ============================================================================
// report
// ============================================================================

pub struct ReportArgs {
    pub trace: PathBuf,
    pub scenario: PathBuf,
    pub out: Option<PathBuf>,
}

/// Recompute metrics from a stored trace. Output is byte-identical to what
/// `run` wrote for the same trace and scenario.
pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let text = read_file(&args.trace)?;
    let events = read_jsonl(&text).map_err(|e| usage(format!("{}: {e}", args.trace.display())))?;
    let metrics = compute_metrics(&events, &scenario);
    match &args.out {
        Some(path) => {
            write_file(path, &metrics.to_json_string())?;
            write_file(&path.with_extension("csv"), &metrics.to_csv_string())?;
            Ok(format!("wrote {}\n", path.display()))
        }
        None => Ok(metrics.to_json_string()),
    }
}

// ============================================================================
// sweep
// ============================================================================

pub struct SweepArgs {
    pub scenario: PathBuf,
    /// Dotted path into the scenario JSON, e.g. `params.contact_tick`,
    /// `sdccs[0].tau`, or the fleet-resizing shorthand `maps.count`.
    pub param: String,
    /// Raw value tokens as given on the command line.
    pub values: Vec<String>,
    /// Runs per value; seed indices count from zero.
    pub seeds: u32,
    /// Already resolved against the environment; see [`resolve_seed`].
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    if args.values.is_empty() {
        return Err(usage("sweep needs at least one value"));
    }
    if args.seeds == 0 {
        return Err(usage("sweep needs at least one seed"));
    }
    let base_value = load_value(&args.scenario)?;
    let base = parse_scenario_value(base_value.clone())
        .map_err(|e| usage(format!("{}: {e}", args.scenario.display())))?;
    let master = args.seed.unwrap_or(base.seed);

    let mut csv = String::from(
        "param,value,seed_index,seed,emitted,delivered,dropped,delivery_ratio,\
         warnings_issued,true_warnings,false_warnings,missed_events,\
         warning_latency_mean,delivery_latency_mean,buffer_peak_bytes\n",
    );

    for (vi, token) in args.values.iter().enumerate() {
        let value: Value = serde_json::from_str(token)
            .unwrap_or_else(|_| Value::String(token.clone()));
        let mut patched_value = base_value.clone();
        apply_param(&mut patched_value, &args.param, value)?;
        let patched = parse_scenario_value(patched_value)
            .map_err(|e| usage(format!("value `{token}` for {}: {e}", args.param)))?;
        let violations = validate_scenario(&patched);
        if !violations.is_empty() {
            return Err(CliError::Domain(
                violations
                    .iter()
                    .map(|v| format!("value `{token}` for {}: {v}", args.param))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ));
        }

        let mut cells = Vec::new();
        for seed_idx in 0..args.seeds {
            let cell_seed =
                SimRng::derive(master, &[stream::SWEEP_CELL, vi as u64, seed_idx as u64])
                    .next_u64();
            let out = run_checked(&patched, &RunConfig { seed: Some(cell_seed), until: None })?;
            let s = out.metrics.summary;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                args.param,
                token,
                seed_idx,
                cell_seed,
                s.emitted_reports,
                s.delivered_reports,
                s.dropped_reports,
                s.delivery_ratio,
                s.warnings_issued,
                s.true_warnings,
                s.false_warnings,
                s.missed_events,
                opt_cell(s.warning_latency_mean),
                opt_cell(s.delivery_latency_mean),
                s.buffer_peak_bytes,
            ));
            cells.push(s);
        }

        let n = cells.len() as f64;
        let mean = |f: &dyn Fn(&dmcis_core::metrics::Summary) -> f64| {
            cells.iter().map(|c| f(c)).sum::<f64>() / n
        };
        // latency means: average over the cells that produced one
        let opt_mean = |f: &dyn Fn(&dmcis_core::metrics::Summary) -> Option<f64>| {
            let xs: Vec<f64> = cells.iter().filter_map(|c| f(c)).collect();
            if xs.is_empty() { None } else { Some(xs.iter().sum::<f64>() / xs.len() as f64) }
        };
        csv.push_str(&format!(
            "{},{},mean,,{},{},{},{},{},{},{},{},{},{},{}\n",
            args.param,
            token,
            mean(&|c| c.emitted_reports as f64),
            mean(&|c| c.delivered_reports as f64),
            mean(&|c| c.dropped_reports as f64),
            mean(&|c| c.delivery_ratio),
            mean(&|c| c.warnings_issued as f64),
            mean(&|c| c.true_warnings as f64),
            mean(&|c| c.false_warnings as f64),
            mean(&|c| c.missed_events as f64),
            opt_cell(opt_mean(&|c| c.warning_latency_mean)),
            opt_cell(opt_mean(&|c| c.delivery_latency_mean)),
            mean(&|c| c.buffer_peak_bytes as f64),
        ));
    }

    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            Ok(format!("wrote {}\n", path.display()))
        }
        None => Ok(csv),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ============================================================================
// Parameter paths
// ============================================================================

/// Patch one value inside the scenario JSON.
///
/// Paths are dotted field names with optional `[idx]` steps, resolved
/// against the raw document so any scenario field can be swept. The final
/// field is inserted if absent (letting defaults be overridden); missing
/// intermediate objects are created empty. Typos still fail: the patched
/// document is re-parsed, which rejects unknown fields.
///
/// `maps.count` is special: it resizes the ferry fleet to the given count
/// by cloning the existing maps round-robin, renumbering ids from 1 and
/// spreading the copies' phase offsets evenly around the route.
pub fn apply_param(doc: &mut Value, path: &str, new: Value) -> Result<(), CliError> {
    if path == "maps.count" {
        return resize_fleet(doc, &new);
    }

    let segments = parse_path(path)?;
    let mut cur = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match seg {
            Segment::Field(name) => {
                let obj = cur
                    .as_object_mut()
                    .ok_or_else(|| usage(format!("{path}: `{name}` is not inside an object")))?;
                if last {
                    obj.insert(name.clone(), new);
                    return Ok(());
                }
                cur = obj
                    .entry(name.clone())
                    .or_insert_with(|| Value::Object(serde_json::Map::new()));
            }
            Segment::Index(idx) => {
                let arr = cur
                    .as_array_mut()
                    .ok_or_else(|| usage(format!("{path}: `[{idx}]` is not inside an array")))?;
                let len = arr.len();
                let slot = arr
                    .get_mut(*idx)
                    .ok_or_else(|| usage(format!("{path}: index {idx} out of range ({len} elements)")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                cur = slot;
            }
        }
    }
    unreachable!("parse_path returns at least one segment")
}

#[derive(Debug, PartialEq)]
enum Segment {
    Field(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Segment>, CliError> {
    let mut out = Vec::new();
    for piece in path.split('.') {
        let mut rest = piece;
        let field_end = rest.find('[').unwrap_or(rest.len());
        let field = &rest[..field_end];
        if !field.is_empty() {
            out.push(Segment::Field(field.to_owned()));
        }
        rest = &rest[field_end..];
        while let Some(stripped) = rest.strip_prefix('[') {
            let close = stripped
                .find(']')
                .ok_or_else(|| usage(format!("{path}: unclosed `[`")))?;
            let idx = stripped[..close]
                .parse::<usize>()
                .map_err(|_| usage(format!("{path}: `[{}]` is not an index", &stripped[..close])))?;
            out.push(Segment::Index(idx));
            rest = &stripped[close + 1..];
        }
        if !rest.is_empty() {
            return Err(usage(format!("{path}: trailing `{rest}`")));
        }
    }
    if out.is_empty() {
        return Err(usage("empty parameter path"));
    }
    Ok(out)
}

fn resize_fleet(doc: &mut Value, new: &Value) -> Result<(), CliError> {
    let count = new
        .as_u64()
        .ok_or_else(|| usage(format!("maps.count takes a non-negative integer, got {new}")))?
        as usize;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| usage("scenario document is not an object"))?;
    let base: Vec<Value> = match obj.get("maps").and_then(Value::as_array) {
        Some(a) => a.clone(),
        None => Vec::new(),
    };
    if count > 0 && base.is_empty() {
        return Err(usage("maps.count cannot grow a fleet from zero maps"));
    }
    let mut fleet = Vec::with_capacity(count);
    for j in 0..count {
        let mut m = base[j % base.len()].clone();
        let slot = m
            .as_object_mut()
            .ok_or_else(|| usage("maps entries must be objects"))?;
        slot.insert("id".into(), Value::from(j as u64 + 1));
        let base_phase = slot.get("phase").and_then(Value::as_f64).unwrap_or(0.0);
        // copy r of a base map starts r/ceil(count/base) further around
        // the loop, so doubling the fleet interleaves rather than stacks
        let copies = count.div_ceil(base.len());
        let offset = (j / base.len()) as f64 / copies as f64;
        slot.insert("phase".into(), Value::from((base_phase + offset).rem_euclid(1.0)));
        fleet.push(m);
    }
    obj.insert("maps".into(), Value::Array(fleet));
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================
