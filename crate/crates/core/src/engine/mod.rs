//! Scheduling policies over concrete trajectories.
//!
//! An [`Instance`] fixes, for every hop, the segment / speculator / target
//! durations and whether the speculative observation is accepted. Policies:
//!
//! - `sequential`: segment, then target call, hop after hop;
//! - `full-speculation`: speculator only, never consults the target tool (lossy);
//! - `bounded`: windows of up to `k` threads; the next window starts only when
//!   the current one is fully verified or rolled back. `analytic-round` charges
//!   each round exactly `j` segments, `j - 1` speculator calls and one target
//!   call; `event-driven` simulates the real overlap;
//! - `continuous`: keeps up to `k` threads in flight and extends the frontier
//!   as soon as a slot frees.
//!
//! Speculative policies and the live executor share one scheduler state
//! machine ([`window`]); the discrete-event kernel drives it in virtual time.
//! Verification takes no simulated time, and the final-answer segment after
//! the last hop is not part of the wall clock.

mod baseline;
pub mod kernel;
pub mod live;
mod window;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::analytics::Window;
use crate::error::{Error, Result};
use crate::profile::{Substream, SystemProfile};
use crate::verifier::{verify, Decision, VerifierConfig};

pub use live::{live_run, live_run_instance, LiveConfig, LiveReport};

/// Thread cap applied to an unbounded continuous window.
pub const UNBOUNDED_CAP: usize = 1024;

/// How the speculative observation of a hop is judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Speculation {
    Outcome { spec_success: bool },
    Observed { target_obs: String, spec_obs: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopOutcome {
    pub hop_index: usize,
    pub t_seg: f64,
    pub t_target: f64,
    pub t_spec: f64,
    pub speculation: Speculation,
}

impl HopOutcome {
    pub fn outcome(hop_index: usize, t_seg: f64, t_spec: f64, t_target: f64, spec_success: bool) -> Self {
        HopOutcome {
            hop_index,
            t_seg,
            t_target,
            t_spec,
            speculation: Speculation::Outcome { spec_success },
        }
    }

    pub fn observed(
        hop_index: usize,
        t_seg: f64,
        t_spec: f64,
        t_target: f64,
        target_obs: impl Into<String>,
        spec_obs: impl Into<String>,
    ) -> Self {
        HopOutcome {
            hop_index,
            t_seg,
            t_target,
            t_spec,
            speculation: Speculation::Observed {
                target_obs: target_obs.into(),
                spec_obs: spec_obs.into(),
            },
        }
    }

    fn is_observed(&self) -> bool {
        matches!(self.speculation, Speculation::Observed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplePolicy {
    /// Every attempt at a hop sees the recorded durations and outcome.
    FixedPerHop,
    /// Each regeneration of a hop draws fresh durations and a fresh outcome.
    FreshPerAttempt,
}

/// Draw source for fresh-per-attempt instances.
#[derive(Debug, Clone, Copy)]
struct AttemptSource {
    profile: SystemProfile,
    stream: Substream,
}

impl AttemptSource {
    fn draw(&self, hop: usize, attempt: u32) -> (f64, f64, f64, bool) {
        let mut rng = self.stream.child(hop as u64).child(attempt as u64).rng();
        let seg = self.profile.seg().sample(&mut rng);
        let spec = self.profile.spec().sample(&mut rng);
        let target = self.profile.target().sample(&mut rng);
        let u: f64 = rand::Rng::random(&mut rng);
        (seg, spec, target, u < self.profile.p())
    }
}

/// One stage realization seen by a scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Attempt {
    pub seg: f64,
    pub spec: f64,
    pub target: f64,
    pub accepted: bool,
}

fn default_verifier() -> &'static VerifierConfig {
    static CFG: OnceLock<VerifierConfig> = OnceLock::new();
    CFG.get_or_init(VerifierConfig::default)
}

/// A concrete N-hop trajectory.
#[derive(Debug, Clone)]
pub struct Instance {
    hops: Vec<HopOutcome>,
    resample: ResamplePolicy,
    source: Option<AttemptSource>,
    verifier: Option<Arc<VerifierConfig>>,
    decisions: Vec<Option<Decision>>,
}

impl Instance {
    /// A fixed-per-hop instance from recorded hops.
    pub fn new(hops: Vec<HopOutcome>) -> Result<Self> {
        if hops.is_empty() {
            return Err(Error::InvalidInstance("instance has no hops".into()));
        }
        for (i, hop) in hops.iter().enumerate() {
            if hop.hop_index != i {
                return Err(Error::InvalidInstance(format!(
                    "hop indices must be contiguous from 0; position {i} holds hop {}",
                    hop.hop_index
                )));
            }
            for (name, v) in [("t_seg", hop.t_seg), ("t_spec", hop.t_spec), ("t_target", hop.t_target)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidInstance(format!("hop {i}: {name} must be positive, got {v}")));
                }
            }
        }
        let observed = hops[0].is_observed();
        if hops.iter().any(|h| h.is_observed() != observed) {
            return Err(Error::InvalidInstance(
                "hops mix outcome and observation records".into(),
            ));
        }
        let mut instance = Instance {
            hops,
            resample: ResamplePolicy::FixedPerHop,
            source: None,
            verifier: None,
            decisions: Vec::new(),
        };
        instance.refresh_decisions();
        Ok(instance)
    }

    /// Outcome-mode instance with the same durations on every hop.
    pub fn uniform(n_hops: usize, t_seg: f64, t_spec: f64, t_target: f64, successes: &[bool]) -> Result<Self> {
        if successes.len() != n_hops {
            return Err(Error::InvalidInstance(format!(
                "{} success flags for {n_hops} hops",
                successes.len()
            )));
        }
        Self::new(
            successes
                .iter()
                .enumerate()
                .map(|(i, &ok)| HopOutcome::outcome(i, t_seg, t_spec, t_target, ok))
                .collect(),
        )
    }

    /// Samples a synthetic instance; attempt 0 of every hop is stored in `hops`.
    pub fn sample(profile: &SystemProfile, n_hops: usize, stream: Substream, resample: ResamplePolicy) -> Result<Self> {
        if n_hops == 0 {
            return Err(Error::InvalidInstance("instance has no hops".into()));
        }
        let source = AttemptSource {
            profile: *profile,
            stream,
        };
        let hops = (0..n_hops)
            .map(|i| {
                let (seg, spec, target, ok) = source.draw(i, 0);
                HopOutcome::outcome(i, seg, spec, target, ok)
            })
            .collect();
        let mut instance = Self::new(hops)?;
        if resample == ResamplePolicy::FreshPerAttempt {
            instance.resample = resample;
            instance.source = Some(source);
        }
        Ok(instance)
    }

    /// Uses `config` instead of the default verifier for observation-mode hops.
    pub fn with_verifier(mut self, config: Arc<VerifierConfig>) -> Self {
        self.verifier = Some(config);
        self.refresh_decisions();
        self
    }

    fn refresh_decisions(&mut self) {
        let cfg = self.verifier.as_deref().unwrap_or_else(|| default_verifier());
        self.decisions = self
            .hops
            .iter()
            .map(|h| match &h.speculation {
                Speculation::Observed { target_obs, spec_obs } => Some(verify(target_obs, spec_obs, cfg)),
                Speculation::Outcome { .. } => None,
            })
            .collect();
    }

    pub fn hops(&self) -> &[HopOutcome] {
        &self.hops
    }

    pub fn n_hops(&self) -> usize {
        self.hops.len()
    }

    pub fn resample_policy(&self) -> ResamplePolicy {
        self.resample
    }

    pub fn is_observation_mode(&self) -> bool {
        self.hops[0].is_observed()
    }

    /// Whether the recorded speculation of `hop` is accepted.
    pub fn accepted(&self, hop: usize) -> bool {
        match (&self.hops[hop].speculation, self.decisions[hop]) {
            (Speculation::Outcome { spec_success }, _) => *spec_success,
            (Speculation::Observed { .. }, Some(d)) => d.accepted,
            (Speculation::Observed { .. }, None) => unreachable!("decisions refreshed on construction"),
        }
    }

    /// Verifier decision of an observation-mode hop.
    pub fn decision(&self, hop: usize) -> Option<Decision> {
        self.decisions[hop]
    }

    /// Same durations, with observation pairs replaced by precomputed outcomes.
    pub fn to_outcome_mode(&self) -> Instance {
        let hops = self
            .hops
            .iter()
            .map(|h| HopOutcome::outcome(h.hop_index, h.t_seg, h.t_spec, h.t_target, self.accepted(h.hop_index)))
            .collect();
        Instance::new(hops).expect("projection of a valid instance")
    }

    pub(crate) fn attempt(&self, hop: usize, attempt: u32) -> Attempt {
        match (&self.source, attempt) {
            (Some(source), a) if a > 0 => {
                let (seg, spec, target, accepted) = source.draw(hop, a);
                Attempt { seg, spec, target, accepted }
            }
            _ => {
                let h = &self.hops[hop];
                Attempt {
                    seg: h.t_seg,
                    spec: h.t_spec,
                    target: h.t_target,
                    accepted: self.accepted(hop),
                }
            }
        }
    }

    /// Observation committed for `hop` after verification.
    pub(crate) fn committed_observation(&self, hop: usize, used_speculation: bool) -> Option<String> {
        match &self.hops[hop].speculation {
            Speculation::Observed { target_obs, spec_obs } => {
                Some(if used_speculation { spec_obs.clone() } else { target_obs.clone() })
            }
            Speculation::Outcome { .. } => None,
        }
    }
}

/// Observations a verifier-gated sequential run commits: with speculation
/// enabled, every hop but the last takes the speculative observation when the
/// verifier accepts it; otherwise (and always without speculation) the
/// target observation.
pub fn verifier_gated_reference(instance: &Instance, speculative: bool) -> Option<Vec<String>> {
    if !instance.is_observation_mode() {
        return None;
    }
    let n = instance.n_hops();
    (0..n)
        .map(|i| instance.committed_observation(i, speculative && i + 1 < n && instance.accepted(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundedMode {
    AnalyticRound,
    EventDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Sequential,
    FullSpeculation,
    Bounded { k: usize, mode: BoundedMode },
    Continuous { window: Window },
}

impl Policy {
    /// Parses a policy name (`sequential`, `full-speculation`, `bounded-analytic`,
    /// `bounded-event`, `continuous`) with its window.
    pub fn parse(name: &str, window: Window) -> Result<Self> {
        let bounded_k = || match window {
            Window::Threads(k) => Ok(k),
            Window::Unbounded => Err(Error::param("k", "bounded policies need a finite window")),
        };
        Ok(match name {
            "sequential" => Policy::Sequential,
            "full-speculation" | "full" => Policy::FullSpeculation,
            "bounded-analytic" => Policy::Bounded {
                k: bounded_k()?,
                mode: BoundedMode::AnalyticRound,
            },
            "bounded-event" | "bounded" => Policy::Bounded {
                k: bounded_k()?,
                mode: BoundedMode::EventDriven,
            },
            "continuous" => Policy::Continuous { window },
            other => return Err(Error::param("policy", format!("unknown policy `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Sequential => "sequential",
            Policy::FullSpeculation => "full-speculation",
            Policy::Bounded {
                mode: BoundedMode::AnalyticRound,
                ..
            } => "bounded-analytic",
            Policy::Bounded {
                mode: BoundedMode::EventDriven,
                ..
            } => "bounded-event",
            Policy::Continuous { .. } => "continuous",
        }
    }

    pub fn window(&self) -> Window {
        match self {
            Policy::Sequential | Policy::FullSpeculation => Window::Threads(1),
            Policy::Bounded { k, .. } => Window::Threads(*k),
            Policy::Continuous { window } => *window,
        }
    }

    /// Lossless policies commit exactly the sequential trajectory.
    pub fn is_lossless(&self) -> bool {
        !matches!(self, Policy::FullSpeculation)
    }

    /// Whether the speculator is consulted under this policy.
    pub fn speculates(&self) -> bool {
        match self {
            Policy::Sequential => false,
            Policy::FullSpeculation => true,
            Policy::Bounded { k, .. } => *k >= 2,
            Policy::Continuous { window } => *window != Window::Threads(1),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::Sequential | Policy::FullSpeculation => f.write_str(self.name()),
            _ => write!(f, "{}(k={})", self.name(), self.window()),
        }
    }
}

/// Outcome of one scheduled execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub policy: String,
    pub k: String,
    pub wall_clock: f64,
    pub calls_model: u64,
    pub calls_target: u64,
    pub calls_spec: u64,
    pub commits: u64,
    pub rollbacks: u64,
    pub starved_rounds: u64,
    pub frontier_idle: f64,
    pub divergent: bool,
    pub committed_sequence: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committed_obs: Option<Vec<String>>,
}

impl RunResult {
    fn empty(policy: &Policy, observed: bool) -> Self {
        RunResult {
            policy: policy.name().to_string(),
            k: policy.window().to_string(),
            wall_clock: 0.0,
            calls_model: 0,
            calls_target: 0,
            calls_spec: 0,
            commits: 0,
            rollbacks: 0,
            starved_rounds: 0,
            frontier_idle: 0.0,
            divergent: false,
            committed_sequence: Vec::new(),
            committed_obs: observed.then(Vec::new),
        }
    }

    fn commit(&mut self, hop: usize, obs: Option<String>) {
        self.commits += 1;
        self.committed_sequence.push(hop);
        if let (Some(list), Some(o)) = (self.committed_obs.as_mut(), obs) {
            list.push(o);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum EventKind {
    SegStart,
    SegDone,
    SpecStart,
    SpecDone,
    TargetLaunch,
    TargetDone,
    VerifyAccept,
    VerifyReject,
    ThreadSpawn,
    /// `target_cancelled` is set when the thread's target call was still in flight.
    ThreadDiscard { target_cancelled: bool },
    Commit,
    FinalAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub virtual_time: f64,
    pub sequence_no: u64,
    #[serde(flatten)]
    pub event: EventKind,
    pub thread_id: u64,
    pub hop_index: usize,
}

/// Totally ordered record of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    entries: Vec<LogEntry>,
}

impl EventLog {
    pub(crate) fn push(&mut self, virtual_time: f64, event: EventKind, thread_id: u64, hop_index: usize) {
        let sequence_no = self.entries.len() as u64;
        self.entries.push(LogEntry {
            virtual_time,
            sequence_no,
            event,
            thread_id,
            hop_index,
        });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, event: EventKind) -> usize {
        self.entries.iter().filter(|e| e.event == event).count()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entry serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn run(instance: &Instance, policy: &Policy) -> Result<(RunResult, EventLog)> {
    match *policy {
        Policy::Sequential => Ok(run_sequential(instance)),
        Policy::FullSpeculation => Ok(run_full_speculation(instance)),
        Policy::Bounded { k, mode } => run_bounded(instance, k, mode),
        Policy::Continuous { window } => run_continuous(instance, window),
    }
}

pub fn run_sequential(instance: &Instance) -> (RunResult, EventLog) {
    baseline::sequential(instance)
}

pub fn run_full_speculation(instance: &Instance) -> (RunResult, EventLog) {
    baseline::full_speculation(instance)
}

pub fn run_bounded(instance: &Instance, k: usize, mode: BoundedMode) -> Result<(RunResult, EventLog)> {
    if k == 0 {
        return Err(Error::param("k", "window size must be at least 1"));
    }
    match mode {
        BoundedMode::AnalyticRound => Ok(baseline::analytic_rounds(instance, k)),
        BoundedMode::EventDriven => {
            window::simulate(instance, Policy::Bounded { k, mode }, window::Discipline::Bounded, k)
        }
    }
}

pub fn run_continuous(instance: &Instance, window: Window) -> Result<(RunResult, EventLog)> {
    let cap = match window {
        Window::Threads(0) => return Err(Error::param("k", "window size must be at least 1")),
        Window::Threads(k) => k,
        Window::Unbounded => UNBOUNDED_CAP,
    };
    let discipline = match window {
        Window::Unbounded => window::Discipline::ContinuousUnbounded,
        Window::Threads(_) => window::Discipline::Continuous,
    };
    window::simulate(instance, Policy::Continuous { window }, discipline, cap)
}

#[cfg(test)]
mod tests;
