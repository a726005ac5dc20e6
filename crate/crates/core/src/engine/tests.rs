use proptest::prelude::*;

use super::*;
use crate::profile::make_profile;

fn uniform(n: usize, ok: &[bool]) -> Instance {
    Instance::uniform(n, 1.0, 2.0, 10.0, ok).unwrap()
}

fn times_of(log: &EventLog, kind: EventKind) -> Vec<f64> {
    log.entries()
        .iter()
        .filter(|e| e.event == kind)
        .map(|e| e.virtual_time)
        .collect()
}

fn all_policies(k: usize) -> Vec<Policy> {
    vec![
        Policy::Sequential,
        Policy::Bounded {
            k,
            mode: BoundedMode::AnalyticRound,
        },
        Policy::Bounded {
            k,
            mode: BoundedMode::EventDriven,
        },
        Policy::Continuous {
            window: Window::Threads(k),
        },
        Policy::Continuous {
            window: Window::Unbounded,
        },
    ]
}

#[test]
fn sequential_sums_stages() {
    let inst = uniform(4, &[true; 4]);
    let (r, log) = run_sequential(&inst);
    assert_eq!(r.wall_clock, 44.0);
    assert_eq!((r.calls_model, r.calls_target, r.calls_spec), (4, 4, 0));
    assert_eq!(r.committed_sequence, vec![0, 1, 2, 3]);
    assert_eq!(log.count(EventKind::FinalAnswer), 1);

    let one = Instance::uniform(1, 0.5, 2.0, 3.25, &[false]).unwrap();
    assert_eq!(run_sequential(&one).0.wall_clock, 3.75);
    assert!(Instance::new(vec![]).is_err());
}

#[test]
fn full_speculation_sums_and_flags_divergence() {
    let (r, _) = run_full_speculation(&uniform(4, &[true; 4]));
    assert_eq!(r.wall_clock, 12.0);
    assert!(!r.divergent);
    assert_eq!(r.calls_target, 0);
    let (r, _) = run_full_speculation(&uniform(4, &[true, true, false, true]));
    assert!(r.divergent);
    assert_eq!(r.wall_clock, 12.0);
}

#[test]
fn full_speculation_uses_verifier_in_observation_mode() {
    let hops = vec![
        HopOutcome::observed(0, 1.0, 2.0, 10.0, "Paul Wendkos", "paul wendkos."),
        HopOutcome::observed(1, 1.0, 2.0, 10.0, "1925", "1911"),
    ];
    let inst = Instance::new(hops).unwrap();
    let (r, _) = run_full_speculation(&inst);
    assert!(r.divergent);
    assert_eq!(r.committed_obs.unwrap(), vec!["paul wendkos.", "1911"]);
}

#[test]
fn analytic_round_costs() {
    let (r, _) = run_bounded(&uniform(3, &[true; 3]), 3, BoundedMode::AnalyticRound).unwrap();
    assert_eq!(r.wall_clock, 17.0);
    assert_eq!(r.rollbacks, 0);

    // First hop rejected: 1 + 10, then a round over hops 1 and 2: 1 + 2 + 1 + 10.
    let (r, _) = run_bounded(&uniform(3, &[false, true, true]), 3, BoundedMode::AnalyticRound).unwrap();
    assert_eq!(r.wall_clock, 11.0 + 14.0);
    assert_eq!(r.rollbacks, 1);
    assert_eq!(r.committed_sequence, vec![0, 1, 2]);
}

#[test]
fn zero_window_is_rejected() {
    let inst = uniform(2, &[true, true]);
    assert!(run_bounded(&inst, 0, BoundedMode::EventDriven).is_err());
    assert!(run_bounded(&inst, 0, BoundedMode::AnalyticRound).is_err());
    assert!(run_continuous(&inst, Window::Threads(0)).is_err());
}

#[test]
fn continuous_hand_trace() {
    let inst = uniform(4, &[true; 4]);
    let (r, log) = run_continuous(&inst, Window::Unbounded).unwrap();
    assert_eq!(times_of(&log, EventKind::TargetLaunch), vec![1.0, 4.0, 7.0, 10.0]);
    assert_eq!(r.wall_clock, 20.0);
    assert_eq!(r.committed_sequence, vec![0, 1, 2, 3]);
    assert_eq!((r.calls_model, r.calls_target, r.calls_spec), (4, 4, 3));
    assert_eq!(times_of(&log, EventKind::Commit), vec![11.0, 14.0, 17.0, 20.0]);
}

#[test]
fn continuous_rollback_trace() {
    let inst = uniform(2, &[false, true]);
    let (r, log) = run_continuous(&inst, Window::Unbounded).unwrap();
    assert_eq!(times_of(&log, EventKind::VerifyReject), vec![11.0]);
    assert_eq!(r.wall_clock, 22.0);
    assert_eq!(r.rollbacks, 1);
    // The speculative hop-1 thread (target launched at 4) was discarded mid-flight.
    assert_eq!(log.count(EventKind::ThreadDiscard { target_cancelled: true }), 1);
    assert_eq!(r.calls_target, 3);
    assert_eq!(r.committed_sequence, vec![0, 1]);
}

#[test]
fn single_thread_matches_sequential() {
    for ok in [[true, true, true, true], [false, true, false, false]] {
        let inst = uniform(4, &ok);
        let (seq, _) = run_sequential(&inst);
        for mode in [BoundedMode::AnalyticRound, BoundedMode::EventDriven] {
            let (r, _) = run_bounded(&inst, 1, mode).unwrap();
            assert_eq!(r.wall_clock, seq.wall_clock);
            assert_eq!(r.calls_spec, 0);
            assert_eq!(r.calls_target, seq.calls_target);
        }
        let (r, _) = run_continuous(&inst, Window::Threads(1)).unwrap();
        assert_eq!(r.wall_clock, seq.wall_clock);
        assert_eq!(r.committed_sequence, seq.committed_sequence);
    }
}

#[test]
fn starvation_threshold_with_constant_latencies() {
    // Starved iff target > k*spec + (k-1)*seg.
    for k in 2..6usize {
        for target in [3.0, 5.0, 7.9, 8.1, 10.0, 20.0] {
            let (seg, spec) = (1.0, 2.0);
            let inst = Instance::uniform(12, seg, spec, target, &[true; 12]).unwrap();
            let (r, _) = run_continuous(&inst, Window::Threads(k)).unwrap();
            let expect = target > k as f64 * spec + (k as f64 - 1.0) * seg;
            assert_eq!(r.starved_rounds > 0, expect, "k={k} target={target}");
            assert_eq!(r.frontier_idle > 0.0, expect);
        }
    }
}

#[test]
fn unbounded_window_reports_cap() {
    let inst = Instance::uniform(2000, 1e-3, 1e-3, 1e3, &vec![true; 2000]).unwrap();
    let err = run_continuous(&inst, Window::Unbounded).unwrap_err();
    assert!(matches!(err, Error::WindowCapExceeded { cap: UNBOUNDED_CAP, .. }));
}

#[test]
fn policy_parsing() {
    assert_eq!(Policy::parse("sequential", Window::Unbounded).unwrap(), Policy::Sequential);
    assert!(Policy::parse("bounded-event", Window::Unbounded).is_err());
    assert!(Policy::parse("nope", Window::Threads(2)).is_err());
    let p = Policy::parse("continuous", Window::Unbounded).unwrap();
    assert_eq!(p.to_string(), "continuous(k=inf)");
    assert!(!Policy::FullSpeculation.is_lossless());
}

#[test]
fn log_jsonl_round_trips() {
    let (_, log) = run_continuous(&uniform(2, &[false, true]), Window::Unbounded).unwrap();
    let text = log.to_jsonl();
    let back: Vec<LogEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, log.entries());
    assert!(text.contains(r#""event":"ThreadDiscard","target_cancelled":true"#));
}

#[test]
fn fresh_attempts_redraw_after_rollback() {
    let profile = make_profile(0.3, 0.3, 0.1, 0.4, 1.0).unwrap();
    let inst = Instance::sample(&profile, 30, Substream::root(9), ResamplePolicy::FreshPerAttempt).unwrap();
    let (a, _) = run_continuous(&inst, Window::Threads(4)).unwrap();
    let (b, _) = run_continuous(&inst, Window::Threads(4)).unwrap();
    assert_eq!(a, b);
    assert!(a.rollbacks > 0);
    assert!(a.calls_model > 30);
}

#[test]
fn live_executor_tracks_simulation() {
    let inst = uniform(4, &[true; 4]);
    let cfg = LiveConfig::default();
    for policy in [
        Policy::Sequential,
        Policy::Continuous {
            window: Window::Unbounded,
        },
    ] {
        let report = live_run_instance(&inst, &policy, &cfg).unwrap();
        assert!(report.within_tolerance, "{policy}: {report:?}");
        assert_eq!(report.result.committed_sequence, vec![0, 1, 2, 3]);
    }
    assert!(live_run_instance(&inst, &Policy::FullSpeculation, &cfg).is_err());
    let tight = LiveConfig {
        worker_cap: 2,
        ..cfg
    };
    let err = live_run_instance(&inst, &Policy::Continuous { window: Window::Unbounded }, &tight).unwrap_err();
    assert!(matches!(err, Error::WorkerCapExceeded { cap: 2 }));
}

fn check_log(log: &EventLog, n: usize) {
    let entries = log.entries();
    for w in entries.windows(2) {
        assert!(w[0].virtual_time <= w[1].virtual_time);
        assert!(w[0].sequence_no < w[1].sequence_no);
    }
    // Every target launch ends in exactly one completion or cancellation.
    let mut open = std::collections::HashMap::new();
    for e in entries {
        match e.event {
            EventKind::TargetLaunch => {
                assert!(open.insert(e.thread_id, ()).is_none());
            }
            EventKind::TargetDone => {
                assert!(open.remove(&e.thread_id).is_some());
            }
            EventKind::ThreadDiscard { target_cancelled: true } => {
                assert!(open.remove(&e.thread_id).is_some());
            }
            _ => {}
        }
    }
    assert!(open.is_empty(), "unmatched target launches: {open:?}");
    // After a reject at hop j, every live thread on a later hop is discarded before anything else commits.
    for (i, e) in entries.iter().enumerate() {
        if e.event != EventKind::VerifyReject {
            continue;
        }
        let spawned: std::collections::BTreeSet<u64> = entries[..i]
            .iter()
            .filter(|x| x.event == EventKind::ThreadSpawn && x.hop_index > e.hop_index)
            .map(|x| x.thread_id)
            .collect();
        let finished: std::collections::BTreeSet<u64> = entries[..i]
            .iter()
            .filter(|x| matches!(x.event, EventKind::Commit | EventKind::ThreadDiscard { .. }))
            .map(|x| x.thread_id)
            .collect();
        let discarded: std::collections::BTreeSet<u64> = entries[i..]
            .iter()
            .take_while(|x| x.event != EventKind::SegStart && x.event != EventKind::SegDone)
            .filter(|x| matches!(x.event, EventKind::ThreadDiscard { .. }))
            .map(|x| x.thread_id)
            .collect();
        for t in spawned.difference(&finished) {
            assert!(discarded.contains(t), "thread {t} survived reject at hop {}", e.hop_index);
        }
    }
    assert_eq!(log.count(EventKind::Commit), n);
    assert_eq!(log.count(EventKind::FinalAnswer), 1);
    let final_at = entries.iter().position(|e| e.event == EventKind::FinalAnswer).unwrap();
    assert!(entries[final_at..].iter().all(|e| e.event != EventKind::Commit));
}

fn arb_instance() -> impl Strategy<Value = Instance> {
    (1usize..12).prop_flat_map(|n| {
        prop::collection::vec((0.05f64..3.0, 0.05f64..3.0, 0.05f64..12.0, any::<bool>()), n).prop_map(|hops| {
            Instance::new(
                hops.into_iter()
                    .enumerate()
                    .map(|(i, (seg, spec, target, ok))| HopOutcome::outcome(i, seg, spec, target, ok))
                    .collect(),
            )
            .unwrap()
        })
    })
}

const WORDS: &[&str] = &["paris", "1925", "france", "capital", "river", "yes", "no", "i don't know", "seine"];

fn arb_observed() -> impl Strategy<Value = Instance> {
    (1usize..10).prop_flat_map(|n| {
        let text = prop::collection::vec(prop::sample::select(WORDS), 1..4).prop_map(|w| w.join(" "));
        prop::collection::vec((0.05f64..3.0, 0.05f64..3.0, 0.05f64..12.0, text.clone(), text), n).prop_map(|hops| {
            Instance::new(
                hops.into_iter()
                    .enumerate()
                    .map(|(i, (seg, spec, target, t, s))| HopOutcome::observed(i, seg, spec, target, t, s))
                    .collect(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lossless_policies_commit_every_hop(inst in arb_instance(), k in 1usize..=8) {
        let n = inst.n_hops();
        for policy in all_policies(k) {
            let (r, log) = run(&inst, &policy).unwrap();
            prop_assert_eq!(&r.committed_sequence, &(0..n).collect::<Vec<_>>());
            prop_assert!(r.calls_target >= n as u64);
            check_log(&log, n);
        }
    }

    #[test]
    fn lossless_observations_match_gated_reference(inst in arb_observed(), k in 1usize..=8) {
        for policy in all_policies(k) {
            let (r, _) = run(&inst, &policy).unwrap();
            let reference = verifier_gated_reference(&inst, policy.speculates()).unwrap();
            prop_assert_eq!(r.committed_obs.unwrap(), reference, "{}", policy);
        }
    }

    #[test]
    fn deterministic_logs(inst in arb_instance(), k in 1usize..6) {
        for policy in all_policies(k) {
            let a = run(&inst, &policy).unwrap();
            let b = run(&inst, &policy).unwrap();
            prop_assert_eq!(a.1.to_jsonl(), b.1.to_jsonl());
            prop_assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn dominance_with_constant_latencies(
        n in 1usize..14,
        seg in 0.1f64..3.0,
        spec_frac in 0.01f64..1.0,
        target in 0.1f64..15.0,
        flags in prop::collection::vec(any::<bool>(), 14),
        k in 1usize..6,
    ) {
        // The speculator is faster than the tool, as profiles require by default.
        let spec = spec_frac * target;
        let inst = Instance::uniform(n, seg, spec, target, &flags[..n]).unwrap();
        let eps = 1e-9;
        let wall = |p: Policy| run(&inst, &p).unwrap().0.wall_clock;
        let cont = |k| wall(Policy::Continuous { window: Window::Threads(k) });
        let event = |k| wall(Policy::Bounded { k, mode: BoundedMode::EventDriven });
        let analytic = |k| wall(Policy::Bounded { k, mode: BoundedMode::AnalyticRound });
        let seq = wall(Policy::Sequential);
        prop_assert!(cont(k) <= event(k) + eps);
        prop_assert!(event(k) <= analytic(k) + eps);
        prop_assert!(analytic(k) <= seq + eps);
        prop_assert!(cont(k + 1) <= cont(k) + eps);
        prop_assert!(analytic(k + 1) <= analytic(k) + eps);
    }
}
