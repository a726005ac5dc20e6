//! JSON Lines traces and deterministic replay.
//!
//! A trace is a sequence of queries. Each query starts with a header line
//!
//! ```json
//! {"schema_version":1,"query_id":"q1","mode":"outcome","tool_name":"wiki","speculator_name":"cache"}
//! ```
//!
//! followed by one line per hop with `hop_index`, `t_seg_s`, `t_target_s`,
//! `t_spec_s` and either `spec_success` or the `target_obs` / `spec_obs` pair.
//! Hop lines may repeat the `query_id`; header-less files are grouped by it.
//! Replay reruns the recorded stage times under a policy and reports relative
//! latency against sequential execution of the same hops.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, run_sequential, HopOutcome, Instance, Policy, ResamplePolicy, RunResult};
use crate::error::{Error, Result};
use crate::profile::{profile_from_trace, ProfileEstimate, Substream, SystemProfile};
use crate::verifier::VerifierConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMode {
    Outcome,
    Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub query_id: String,
    pub mode: TraceMode,
    #[serde(default)]
    pub tool_name: String,
    #[serde(default)]
    pub speculator_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HopRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_id: Option<String>,
    hop_index: usize,
    t_seg_s: f64,
    t_target_s: f64,
    t_spec_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec_success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_obs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec_obs: Option<String>,
}

impl HopRecord {
    fn mode(&self) -> std::result::Result<TraceMode, String> {
        match (&self.spec_success, &self.target_obs, &self.spec_obs) {
            (Some(_), None, None) => Ok(TraceMode::Outcome),
            (None, Some(_), Some(_)) => Ok(TraceMode::Observation),
            _ => Err("hop needs either `spec_success` or both `target_obs` and `spec_obs`".into()),
        }
    }

    fn to_hop(&self) -> HopOutcome {
        match (&self.spec_success, &self.target_obs, &self.spec_obs) {
            (Some(ok), _, _) => HopOutcome::outcome(self.hop_index, self.t_seg_s, self.t_spec_s, self.t_target_s, *ok),
            (None, Some(t), Some(s)) => HopOutcome::observed(
                self.hop_index,
                self.t_seg_s,
                self.t_spec_s,
                self.t_target_s,
                t.clone(),
                s.clone(),
            ),
            _ => unreachable!("mode checked while parsing"),
        }
    }

    fn from_hop(hop: &HopOutcome) -> Self {
        use crate::engine::Speculation;
        let (spec_success, target_obs, spec_obs) = match &hop.speculation {
            Speculation::Outcome { spec_success } => (Some(*spec_success), None, None),
            Speculation::Observed { target_obs, spec_obs } => (None, Some(target_obs.clone()), Some(spec_obs.clone())),
        };
        HopRecord {
            query_id: None,
            hop_index: hop.hop_index,
            t_seg_s: hop.t_seg,
            t_target_s: hop.t_target,
            t_spec_s: hop.t_spec,
            spec_success,
            target_obs,
            spec_obs,
        }
    }
}

/// One query of a trace file.
#[derive(Debug, Clone)]
pub struct TraceQuery {
    pub header: TraceHeader,
    pub instance: Instance,
}

struct PendingQuery {
    header: TraceHeader,
    header_line: usize,
    explicit_mode: bool,
    hops: Vec<(usize, HopRecord)>,
}

/// Parses trace text. `source` names the input in error messages.
pub fn parse_trace(text: &str, source: &str, verifier: &VerifierConfig) -> Result<Vec<TraceQuery>> {
    verifier.validate()?;
    let verifier = Arc::new(verifier.clone());
    let err = |line: usize, reason: String| Error::Trace {
        path: source.to_string(),
        line,
        reason,
    };

    let mut done: Vec<PendingQuery> = Vec::new();
    let mut current: Option<PendingQuery> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(trimmed).map_err(|e| err(line, format!("malformed JSON: {e}")))?;
        if value.get("schema_version").is_some() {
            let header: TraceHeader =
                serde_json::from_value(value).map_err(|e| err(line, format!("bad header: {e}")))?;
            if header.schema_version != SCHEMA_VERSION {
                return Err(err(
                    line,
                    format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", header.schema_version),
                ));
            }
            done.extend(current.take());
            current = Some(PendingQuery {
                header,
                header_line: line,
                explicit_mode: true,
                hops: Vec::new(),
            });
            continue;
        }
        let hop: HopRecord = serde_json::from_value(value).map_err(|e| err(line, format!("bad hop record: {e}")))?;
        let mode = hop.mode().map_err(|r| err(line, r))?;
        for (name, v) in [("t_seg_s", hop.t_seg_s), ("t_target_s", hop.t_target_s), ("t_spec_s", hop.t_spec_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(line, format!("{name} must be a positive duration, got {v}")));
            }
        }
        let starts_new = match (&current, &hop.query_id) {
            (None, _) => true,
            (Some(q), Some(id)) => *id != q.header.query_id,
            (Some(_), None) => false,
        };
        if starts_new {
            done.extend(current.take());
            current = Some(PendingQuery {
                header: TraceHeader {
                    schema_version: SCHEMA_VERSION,
                    query_id: hop.query_id.clone().unwrap_or_else(|| format!("query-{}", done.len())),
                    mode,
                    tool_name: String::new(),
                    speculator_name: String::new(),
                },
                header_line: line,
                explicit_mode: false,
                hops: Vec::new(),
            });
        }
        let q = current.as_mut().expect("query started above");
        if mode != q.header.mode {
            let origin = if q.explicit_mode { "header" } else { "first hop" };
            return Err(err(
                line,
                format!("hop mode {mode:?} differs from the query's {:?} ({origin})", q.header.mode),
            ));
        }
        q.hops.push((line, hop));
    }
    done.extend(current);

    if done.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(done.len());
    for mut q in done {
        if !seen.insert(q.header.query_id.clone()) {
            return Err(err(q.header_line, format!("duplicate query_id `{}`", q.header.query_id)));
        }
        if q.hops.is_empty() {
            return Err(err(q.header_line, format!("query `{}` has no hops", q.header.query_id)));
        }
        q.hops.sort_by_key(|(line, h)| (h.hop_index, *line));
        for (expected, (line, h)) in q.hops.iter().enumerate() {
            if h.hop_index != expected {
                let what = if h.hop_index < expected { "duplicate" } else { "gapped" };
                return Err(err(*line, format!("{what} hop_index {} (expected {expected})", h.hop_index)));
            }
        }
        let hops = q.hops.iter().map(|(_, h)| h.to_hop()).collect();
        let instance = Instance::new(hops)
            .map_err(|e| err(q.header_line, e.to_string()))?
            .with_verifier(Arc::clone(&verifier));
        out.push(TraceQuery {
            header: q.header,
            instance,
        });
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>, verifier: &VerifierConfig) -> Result<Vec<TraceQuery>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, &path.display().to_string(), verifier)
}

/// Serializes queries back to JSON Lines.
pub fn write_trace(queries: &[TraceQuery]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(&q.header).expect("header serializes"));
        out.push('\n');
        for hop in q.instance.hops() {
            out.push_str(&serde_json::to_string(&HopRecord::from_hop(hop)).expect("hop serializes"));
            out.push('\n');
        }
    }
    out
}

/// Synthetic outcome-mode trace sampled from `profile`, one substream per query.
pub fn generate_trace(profile: &SystemProfile, n_hops: usize, n_queries: usize, seed: u64) -> Result<Vec<TraceQuery>> {
    if n_queries == 0 {
        return Err(Error::param("n_queries", "must be at least 1"));
    }
    let root = Substream::root(seed);
    (0..n_queries)
        .map(|q| {
            let instance = Instance::sample(profile, n_hops, root.child(q as u64), ResamplePolicy::FixedPerHop)?;
            Ok(TraceQuery {
                header: TraceHeader {
                    schema_version: SCHEMA_VERSION,
                    query_id: format!("q{q:04}"),
                    mode: TraceMode::Outcome,
                    tool_name: "synthetic-target".into(),
                    speculator_name: "synthetic-speculator".into(),
                },
                instance,
            })
        })
        .collect()
}

/// One row of a replay report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub query_id: String,
    pub n_hops: usize,
    pub wall_seq_s: f64,
    pub wall_policy_s: f64,
    pub rel_lat: f64,
    pub calls_model: u64,
    pub calls_target: u64,
    pub calls_spec: u64,
    pub rollbacks: u64,
    pub starved_rounds: u64,
}

impl ReplayRow {
    fn new(query_id: &str, n_hops: usize, seq: &RunResult, policy: &RunResult) -> Self {
        ReplayRow {
            query_id: query_id.to_string(),
            n_hops,
            wall_seq_s: seq.wall_clock,
            wall_policy_s: policy.wall_clock,
            rel_lat: policy.wall_clock / seq.wall_clock,
            calls_model: policy.calls_model,
            calls_target: policy.calls_target,
            calls_spec: policy.calls_spec,
            rollbacks: policy.rollbacks,
            starved_rounds: policy.starved_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub policy: String,
    pub k: String,
    pub verifier_fingerprint: String,
    pub rows: Vec<ReplayRow>,
    /// Σ wall(policy) / Σ wall(sequential) over all queries.
    pub aggregate_rel_lat: f64,
    /// Unweighted mean of the per-query ratios.
    pub mean_rel_lat: f64,
    pub estimate: ProfileEstimate,
}

impl ReplayReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| csv_error(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInstance(format!("csv output failed: {e}"))
}

/// Replays every query under `policy`; rows come out in query_id order.
pub fn replay(queries: &[TraceQuery], policy: &Policy, verifier: &VerifierConfig) -> Result<ReplayReport> {
    if queries.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut rows = queries
        .par_iter()
        .map(|q| {
            let (seq, _) = run_sequential(&q.instance);
            let (res, _) = run(&q.instance, policy).map_err(|e| Error::TraceQuery {
                query_id: q.header.query_id.clone(),
                reason: e.to_string(),
            })?;
            Ok(ReplayRow::new(&q.header.query_id, q.instance.n_hops(), &seq, &res))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let total_seq: f64 = rows.iter().map(|r| r.wall_seq_s).sum();
    let total_policy: f64 = rows.iter().map(|r| r.wall_policy_s).sum();
    let mean_rel_lat = rows.iter().map(|r| r.rel_lat).sum::<f64>() / rows.len() as f64;
    let instances: Vec<Instance> = queries.iter().map(|q| q.instance.clone()).collect();
    Ok(ReplayReport {
        policy: policy.name().to_string(),
        k: policy.window().to_string(),
        verifier_fingerprint: verifier.fingerprint(),
        rows,
        aggregate_rel_lat: total_policy / total_seq,
        mean_rel_lat,
        estimate: profile_from_trace(&instances)?,
    })
}
