use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use spechop_cli::{run, EXIT_ASSERT, EXIT_IO, EXIT_OK, EXIT_USAGE};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn path(rel: &str) -> String {
    root().join(rel).to_str().unwrap().to_string()
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn invoke(args: &[&str]) -> Out {
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = run(std::iter::once("spechop").chain(args.iter().copied()), &mut stdout, &mut stderr);
    Out {
        code,
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

/// Runs with `--format json`, checks exit 0 and validates against the shipped schema.
fn json(args: &[&str], schema: &str) -> Value {
    let mut full = args.to_vec();
    full.extend(["--format", "json"]);
    let out = invoke(&full);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let value: Value = serde_json::from_str(&out.stdout).unwrap();
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(root().join(format!("schemas/{schema}.schema.json"))).unwrap())
            .unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
    value
}

const PROFILE: [&str; 6] = ["--p", "0.6", "--alpha", "0.2", "--beta", "0.3"];

fn with_profile<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(PROFILE);
    v.extend(rest);
    v
}

#[test]
fn analyze_reports_table_optimum() {
    let v = json(&["analyze", "--p", "0.68", "--alpha", "0.19", "--beta", "0.10", "--k", "8"], "analyze");
    let r = &v["result"];
    assert!((r["oracle_rel_lat"].as_f64().unwrap() - 0.50).abs() < 0.005);
    assert_eq!(v["config"]["k"], "8");
    assert_eq!(v["fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn analyze_with_single_thread_is_sequential() {
    let v = json(&["analyze", "--p", "0.5", "--alpha", "0.2", "--beta", "0.1", "--k", "1"], "analyze");
    assert_eq!(v["result"]["rel_lat_k"].as_f64().unwrap(), 1.0);
}

#[test]
fn out_of_range_flag_is_a_usage_error() {
    let out = invoke(&["analyze", "--p", "1.2", "--alpha", "0.2", "--beta", "0.1"]);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("--p"), "{}", out.stderr);
    assert!(out.stdout.is_empty());

    let out = invoke(&["analyze", "--p", "0.5"]);
    assert_eq!(out.code, EXIT_USAGE);
    let out = invoke(&["simulate", "--alpha", "0.2", "--beta", "0.1"]);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("--p"), "{}", out.stderr);
}

#[test]
fn capacity_examples() {
    let v = json(&["capacity", "--alpha", "0.2", "--beta", "0.15", "--nu", "0.4", "--eps", "0.05"], "capacity");
    assert_eq!(v["result"]["k_star"], 6);
    let v = json(&["capacity", "--alpha", "0.3", "--beta", "0.75", "--nu", "0.4", "--eps", "0.05"], "capacity");
    assert_eq!(v["result"]["k_star"], 3);
    let v = json(&["capacity", "--alpha", "0.2", "--beta", "0.15", "--nu", "0"], "capacity");
    let k_det = v["result"]["k_det"].as_f64().unwrap();
    assert_eq!(v["result"]["k_star"].as_f64().unwrap(), k_det.ceil());
}

#[test]
fn simulate_without_successes_matches_sequential() {
    let base = ["simulate", "--p", "0", "--alpha", "0.2", "--beta", "0.3", "--trials", "200", "--n-hops", "20"];
    let mut constant = base.to_vec();
    constant.extend(["--nu", "0"]);
    let v = json(&constant, "simulate");
    assert_eq!(v["result"]["stats"]["mean_rel_lat"].as_f64().unwrap(), 1.0);
    assert_eq!(v["assumptions"].as_array().unwrap().len(), 3);

    // Regenerated hops draw fresh latencies, so only the expectation is 1.
    let v = json(&base, "simulate");
    let stats = &v["result"]["stats"];
    let mean = stats["mean_rel_lat"].as_f64().unwrap();
    let ci = stats["ci95_half_width"].as_f64().unwrap();
    assert!((mean - 1.0).abs() <= 3.0 * ci, "{mean} +- {ci}");
}

#[test]
fn simulate_assert_exit_codes() {
    let args = with_profile("simulate", &["--trials", "200", "--n-hops", "100", "--assert"]);
    assert_eq!(invoke(&args).code, EXIT_OK);
    let mut strict = args.clone();
    strict.extend(["--tolerance", "0"]);
    let out = invoke(&strict);
    assert_eq!(out.code, EXIT_ASSERT, "{}", out.stderr);
    assert!(!out.stdout.is_empty(), "the report is still written");
}

#[test]
fn simulate_output_does_not_depend_on_jobs() {
    let base = with_profile("simulate", &["--trials", "300", "--n-hops", "40", "--seed", "17", "--format", "json"]);
    let mut one = base.clone();
    one.extend(["--jobs", "1"]);
    let mut four = base.clone();
    four.extend(["--jobs", "4"]);
    assert_eq!(invoke(&one).stdout, invoke(&four).stdout);
}

#[test]
fn profile_file_is_merged_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("profile.json");
    std::fs::write(&file, r#"{"p": 0.9, "alpha": 0.2, "beta": 0.3, "nu": 0.0}"#).unwrap();
    let file = file.to_str().unwrap();
    let v = json(&["simulate", "--profile", file, "--p", "0", "--trials", "20", "--n-hops", "10"], "simulate");
    assert_eq!(v["config"]["profile"]["p"], 0.0);
    assert_eq!(v["config"]["profile"]["alpha"], 0.2);
    assert_eq!(v["result"]["stats"]["mean_rel_lat"].as_f64().unwrap(), 1.0);
}

#[test]
fn replay_hand_trace() {
    let v = json(&["replay", "--trace", &path("traces/handtrace.jsonl"), "--policy", "continuous"], "replay");
    let row = &v["result"]["rows"][0];
    assert_eq!(row["wall_policy_s"], 20.0);
    assert_eq!(row["wall_seq_s"], 44.0);
    assert_eq!(format!("{:.4}", row["rel_lat"].as_f64().unwrap()), "0.4545");

    let out = invoke(&["replay", "--trace", &path("traces/rollback.jsonl"), "--format", "csv", "--quiet"]);
    assert_eq!(out.code, EXIT_OK);
    let mut lines = out.stdout.lines();
    assert_eq!(
        lines.next().unwrap(),
        "query_id,n_hops,wall_seq_s,wall_policy_s,rel_lat,calls_model,calls_target,calls_spec,rollbacks,starved_rounds"
    );
    assert!(lines.next().unwrap().starts_with("rollback-2,2,22.0,22.0,"));
    assert!(out.stderr.is_empty());
}

#[test]
fn replay_observation_trace_with_verifier_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("verifier.json");
    std::fs::write(&cfg, r#"{"coverage_threshold": 1.0, "jaccard_threshold": 1.0}"#).unwrap();
    let trace = path("traces/observations.jsonl");
    let loose = json(&["replay", "--trace", &trace], "replay");
    let strict = json(&["replay", "--trace", &trace, "--verifier-config", cfg.to_str().unwrap()], "replay");
    assert_ne!(loose["config"]["verifier_fingerprint"], strict["config"]["verifier_fingerprint"]);
    assert_eq!(loose["result"]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn replay_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"hop_index\":0,\"t_seg_s\":1,\"t_target_s\":2,\"t_spec_s\":1,\"spec_success\":true}\nnot json\n").unwrap();
    let out = invoke(&["replay", "--trace", bad.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_IO);
    assert!(out.stderr.contains("bad.jsonl:2"), "{}", out.stderr);

    let out = invoke(&["replay", "--trace", "/nonexistent/trace.jsonl"]);
    assert_eq!(out.code, EXIT_IO);
}

#[test]
fn bounded_policies_need_a_finite_window() {
    let out = invoke(&["replay", "--trace", &path("traces/handtrace.jsonl"), "--policy", "bounded-event"]);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("--k"), "{}", out.stderr);
}

#[test]
fn sweep_over_k_is_monotone() {
    let v = json(
        &with_profile("sweep", &["--axis", "k", "--grid", "1,2,4,inf", "--trials", "200", "--n-hops", "30"]),
        "sweep",
    );
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let lat: Vec<f64> = rows.iter().map(|r| r["mean_rel_lat"].as_f64().unwrap()).collect();
    assert_eq!(lat[0], 1.0);
    assert!(lat.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{lat:?}");

    let out = invoke(&with_profile("sweep", &["--axis", "p", "--grid", "0.2,0.8", "--trials", "50", "--format", "csv", "--quiet"]));
    assert_eq!(out.code, EXIT_OK);
    assert_eq!(out.stdout.lines().count(), 3);
    assert!(out.stdout.starts_with("axis,value,"));
}

#[test]
fn sweep_over_cache_fraction() {
    let v = json(
        &with_profile(
            "sweep",
            &["--axis", "cache-fraction", "--grid", "0,0.5,1", "--cache-anchors", "0:0.2,1:0.9", "--trials", "100"],
        ),
        "sweep",
    );
    let lat: Vec<f64> = v["result"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["mean_rel_lat"].as_f64().unwrap())
        .collect();
    assert!(lat[2] < lat[0], "{lat:?}");
}

#[test]
fn verify_single_pair() {
    let out = invoke(&["verify", "--target", "1925", "--spec", "1911"]);
    assert_eq!(out.code, EXIT_OK);
    assert_eq!(out.stdout, "reject (numeric-mismatch-reject)\n");
    let v = json(&["verify", "--target", "yes", "--spec", "Yes."], "verify");
    assert_eq!(v["result"]["rule_fired"], "short-exact-accept");
    assert_eq!(invoke(&["verify", "--target", "x"]).code, EXIT_USAGE);
    assert_eq!(invoke(&["verify"]).code, EXIT_USAGE);
}

#[test]
fn verify_batch() {
    let v = json(&["verify", "--batch", &path("traces/pairs.jsonl")], "verify");
    assert_eq!(v["result"]["pairs"], 4);
    let rules: Vec<&str> = v["result"]["decisions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["rule_fired"].as_str().unwrap())
        .collect();
    assert_eq!(rules[0], "numeric-mismatch-reject");
    assert_eq!(rules[3], "refusal-reject");
}

#[test]
fn live_run_is_reproducible_when_quiet() {
    let args = with_profile("live", &["--nu", "0", "--n-hops", "3", "--quiet", "--assert"]);
    let v = json(&args, "live");
    assert_eq!(v["result"]["committed_sequence"], serde_json::json!([0, 1, 2]));
    assert!(v["result"].get("measured_wall").is_none());
    let v = json(&with_profile("live", &["--nu", "0", "--n-hops", "3"]), "live");
    assert!(v["result"]["measured_wall"].as_f64().unwrap() > 0.0);

    let out = invoke(&with_profile("live", &["--nu", "0", "--n-hops", "6", "--worker-cap", "2"]));
    assert_eq!(out.code, EXIT_USAGE, "{}", out.stderr);
}

#[test]
fn gen_trace_round_trips_through_replay() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("gen.jsonl");
    let out = invoke(&with_profile(
        "gen-trace",
        &["--n-hops", "5", "--queries", "3", "--seed", "2", "--output", file.to_str().unwrap()],
    ));
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert!(out.stdout.is_empty());
    assert!(out.stderr.starts_with("fingerprint: "));

    let text = std::fs::read_to_string(&file).unwrap();
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("schemas/trace-line.schema.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for line in text.lines() {
        assert!(validator.is_valid(&serde_json::from_str::<Value>(line).unwrap()), "{line}");
    }
    let v = json(&["replay", "--trace", file.to_str().unwrap()], "replay");
    assert_eq!(v["result"]["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn text_output_embeds_the_fingerprint() {
    let out = invoke(&["capacity", "--alpha", "0.2", "--beta", "0.15"]);
    assert!(out.stdout.lines().any(|l| l.starts_with("fingerprint: ")));
    let a = invoke(&["capacity", "--alpha", "0.2", "--beta", "0.15", "--format", "json"]);
    let b = invoke(&["capacity", "--alpha", "0.2", "--beta", "0.15", "--eps", "0.1", "--format", "json"]);
    let fp = |s: &str| serde_json::from_str::<Value>(s).unwrap()["fingerprint"].clone();
    assert_ne!(fp(&a.stdout), fp(&b.stdout));
}

#[test]
fn seed_comes_from_environment_unless_given() {
    let bin = env!("CARGO_BIN_EXE_spechop");
    let run_bin = |env_seed: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(bin);
        cmd.args(with_profile("simulate", &["--trials", "30", "--n-hops", "10", "--format", "json"]))
            .args(extra)
            .env_remove("SPECHOP_SEED");
        if let Some(s) = env_seed {
            cmd.env("SPECHOP_SEED", s);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        serde_json::from_slice::<Value>(&out.stdout).unwrap()["config"]["seed"].clone()
    };
    assert_eq!(run_bin(None, &[]), 0);
    assert_eq!(run_bin(Some("42"), &[]), 42);
    assert_eq!(run_bin(Some("42"), &["--seed", "7"]), 7);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_spechop");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code().unwrap();
    assert_eq!(status(&["--help"]), EXIT_OK);
    assert_eq!(status(&["analyze", "--p", "1.2", "--alpha", "0.2", "--beta", "0.1"]), EXIT_USAGE);
    assert_eq!(status(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(status(&["replay", "--trace", "/nonexistent"]), EXIT_IO);
}
