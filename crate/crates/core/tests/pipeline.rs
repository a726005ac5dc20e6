use spechop::analytics::Window;
use spechop::engine::{run, Policy, ResamplePolicy};
use spechop::experiments::{monte_carlo, sweep, McConfig, SweepAxis, SweepSpec};
use spechop::profile::{make_profile, profile_from_trace, ProfileParams};
use spechop::trace::{generate_trace, parse_trace, replay, write_trace};
use spechop::verifier::VerifierConfig;

fn continuous() -> Policy {
    Policy::Continuous {
        window: Window::Unbounded,
    }
}

#[test]
fn written_trace_replays_like_the_direct_run() {
    let profile = make_profile(0.55, 0.2, 0.3, 0.4, 2.0).unwrap();
    let queries = generate_trace(&profile, 8, 5, 21).unwrap();
    let cfg = VerifierConfig::default();
    let parsed = parse_trace(&write_trace(&queries), "mem", &cfg).unwrap();
    assert_eq!(parsed.len(), 5);

    let report = replay(&parsed, &continuous(), &cfg).unwrap();
    for (q, row) in queries.iter().zip(&report.rows) {
        assert_eq!(q.header.query_id, row.query_id);
        let direct = run(&q.instance, &continuous()).unwrap().0;
        let seq = run(&q.instance, &Policy::Sequential).unwrap().0;
        assert_eq!(row.wall_policy_s, direct.wall_clock);
        assert_eq!(row.wall_seq_s, seq.wall_clock);
        assert_eq!(row.rollbacks, direct.rollbacks);
    }
}

#[test]
fn trace_estimates_recover_the_profile() {
    let profile = make_profile(0.4, 0.25, 0.5, 0.3, 1.0).unwrap();
    let queries = generate_trace(&profile, 50, 200, 8).unwrap();
    let instances: Vec<_> = queries.into_iter().map(|q| q.instance).collect();
    let est = profile_from_trace(&instances).unwrap();
    assert_eq!(est.n_hops, 10_000);
    assert!((est.p_hat - 0.4).abs() < 0.02, "{est:?}");
    assert!((est.alpha_hat - 0.25).abs() < 0.01, "{est:?}");
    assert!((est.beta_hat - 0.5).abs() < 0.02, "{est:?}");
}

#[test]
fn monte_carlo_is_independent_of_worker_count() {
    let profile = make_profile(0.6, 0.2, 0.3, 0.4, 1.0).unwrap();
    let base = McConfig::new(60, continuous(), 400, 99);
    let one = monte_carlo(&profile, &McConfig { jobs: 1, ..base }).unwrap();
    let many = monte_carlo(&profile, &McConfig { jobs: 5, ..base }).unwrap();
    assert_eq!(one, many);
    let fixed = monte_carlo(
        &profile,
        &McConfig {
            resample: ResamplePolicy::FixedPerHop,
            ..base
        },
    )
    .unwrap();
    assert_ne!(one.mean_wall, fixed.mean_wall);
}

#[test]
fn confidence_intervals_cover_a_precise_reference() {
    let profile = make_profile(0.5, 0.2, 0.3, 0.4, 1.0).unwrap();
    let reference = monte_carlo(&profile, &McConfig::new(40, continuous(), 40_000, 1_000_000)).unwrap();
    let covered = (0..100u64)
        .filter(|seed| {
            let s = monte_carlo(&profile, &McConfig::new(40, continuous(), 200, *seed)).unwrap();
            (s.mean_rel_lat - reference.mean_rel_lat).abs() <= s.ci95_half_width
        })
        .count();
    // Nominal 95%; the reference itself carries a little error.
    assert!(covered >= 88, "covered {covered}/100");
}

#[test]
fn sweep_is_monotone_in_success_probability() {
    let spec = SweepSpec {
        axis: SweepAxis::P,
        grid: ["0.1", "0.4", "0.7", "0.95"].map(String::from).to_vec(),
        base: ProfileParams::new(0.5, 0.2, 0.3, 0.4, 1.0),
        policy: "continuous".into(),
        k: Window::Unbounded,
        n_hops: 40,
        trials: 400,
        seed: 12,
        jobs: 0,
        cache: None,
    };
    let rows = sweep(&spec).unwrap();
    assert!(rows.windows(2).all(|w| w[1].mean_rel_lat < w[0].mean_rel_lat), "{rows:?}");
    assert!(rows.windows(2).all(|w| w[1].analytic_rel_lat < w[0].analytic_rel_lat));
}
