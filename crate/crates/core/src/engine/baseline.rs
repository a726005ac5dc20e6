//! Closed-form schedules: sequential, full speculation and analytic rounds.

use super::{EventKind, EventLog, Instance, Policy, RunResult};

/// Collects events out of order and emits them sorted by time (stable).
#[derive(Default)]
struct Timeline {
    events: Vec<(f64, EventKind, u64, usize)>,
}

impl Timeline {
    fn push(&mut self, t: f64, kind: EventKind, thread: u64, hop: usize) {
        self.events.push((t, kind, thread, hop));
    }

    fn into_log(mut self) -> EventLog {
        self.events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut log = EventLog::default();
        for (t, kind, thread, hop) in self.events {
            log.push(t, kind, thread, hop);
        }
        log
    }
}

pub(crate) fn sequential(instance: &Instance) -> (RunResult, EventLog) {
    let mut result = RunResult::empty(&Policy::Sequential, instance.is_observation_mode());
    let mut tl = Timeline::default();
    let mut t = 0.0;
    for hop in 0..instance.n_hops() {
        let a = instance.attempt(hop, 0);
        let id = hop as u64;
        tl.push(t, EventKind::SegStart, id, hop);
        t += a.seg;
        tl.push(t, EventKind::SegDone, id, hop);
        tl.push(t, EventKind::ThreadSpawn, id, hop);
        tl.push(t, EventKind::TargetLaunch, id, hop);
        t += a.target;
        tl.push(t, EventKind::TargetDone, id, hop);
        tl.push(t, EventKind::Commit, id, hop);
        result.calls_model += 1;
        result.calls_target += 1;
        result.commit(hop, instance.committed_observation(hop, false));
    }
    tl.push(t, EventKind::FinalAnswer, instance.n_hops() as u64, instance.n_hops() - 1);
    result.wall_clock = t;
    (result, tl.into_log())
}

/// Never consults the target; commits every speculative observation.
pub(crate) fn full_speculation(instance: &Instance) -> (RunResult, EventLog) {
    let mut result = RunResult::empty(&Policy::FullSpeculation, instance.is_observation_mode());
    let mut tl = Timeline::default();
    let mut t = 0.0;
    for hop in 0..instance.n_hops() {
        let a = instance.attempt(hop, 0);
        let id = hop as u64;
        tl.push(t, EventKind::SegStart, id, hop);
        t += a.seg;
        tl.push(t, EventKind::SegDone, id, hop);
        tl.push(t, EventKind::ThreadSpawn, id, hop);
        tl.push(t, EventKind::SpecStart, id, hop);
        t += a.spec;
        tl.push(t, EventKind::SpecDone, id, hop);
        tl.push(t, EventKind::Commit, id, hop);
        result.calls_model += 1;
        result.calls_spec += 1;
        result.divergent |= !a.accepted;
        result.commit(hop, instance.committed_observation(hop, true));
    }
    tl.push(t, EventKind::FinalAnswer, instance.n_hops() as u64, instance.n_hops() - 1);
    result.wall_clock = t;
    (result, tl.into_log())
}

/// Rounds of up to `k` hops. Within a round each accepted speculation lets the
/// next segment start right after the speculator returns; the round ends with
/// the target call of its last hop or of its first rejected hop.
pub(crate) fn analytic_rounds(instance: &Instance, k: usize) -> (RunResult, EventLog) {
    let n = instance.n_hops();
    let policy = Policy::Bounded {
        k,
        mode: super::BoundedMode::AnalyticRound,
    };
    let mut result = RunResult::empty(&policy, instance.is_observation_mode());
    let mut tl = Timeline::default();
    let mut attempts = vec![0u32; n];
    let mut next_thread = 0u64;
    let mut t = 0.0;
    let mut i = 0;
    while i < n {
        let m = k.min(n - i);
        let mut resolved = Vec::new();
        let mut end = t;
        for (hop, tries) in attempts.iter_mut().enumerate().skip(i).take(m) {
            let a = instance.attempt(hop, *tries);
            *tries += 1;
            let id = next_thread;
            next_thread += 1;
            let speculate = k >= 2 && hop + 1 < n;
            tl.push(end, EventKind::SegStart, id, hop);
            end += a.seg;
            tl.push(end, EventKind::SegDone, id, hop);
            tl.push(end, EventKind::ThreadSpawn, id, hop);
            tl.push(end, EventKind::TargetLaunch, id, hop);
            tl.push(end + a.target, EventKind::TargetDone, id, hop);
            result.calls_model += 1;
            result.calls_target += 1;
            if speculate {
                tl.push(end, EventKind::SpecStart, id, hop);
                tl.push(end + a.spec, EventKind::SpecDone, id, hop);
                result.calls_spec += 1;
            }
            let last = hop + 1 == i + m;
            if !speculate || last || !a.accepted {
                end += if speculate { a.target.max(a.spec) } else { a.target };
                resolved.push((id, hop, speculate, a.accepted));
                break;
            }
            end += a.spec;
            resolved.push((id, hop, speculate, a.accepted));
        }
        for (id, hop, speculated, accepted) in resolved {
            if speculated {
                let kind = if accepted {
                    EventKind::VerifyAccept
                } else {
                    result.rollbacks += 1;
                    EventKind::VerifyReject
                };
                tl.push(end, kind, id, hop);
            }
            tl.push(end, EventKind::Commit, id, hop);
            result.commit(hop, instance.committed_observation(hop, speculated && accepted));
            i = hop + 1;
        }
        t = end;
    }
    tl.push(t, EventKind::FinalAnswer, next_thread, n - 1);
    result.wall_clock = t;
    (result, tl.into_log())
}
