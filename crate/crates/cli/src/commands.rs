use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use serde_json::{json, Value};

use spechop::analytics::{
    analyze, deterministic_capacity, risk_adjusted_capacity, starvation_bound, AnalyticInputs, Window,
};
use spechop::engine::{live_run, LiveConfig, Policy, ResamplePolicy};
use spechop::experiments::{
    compare_to_theory, monte_carlo, sweep, sweep_csv, CacheMapping, McConfig, SweepSpec,
};
use spechop::profile::ProfileParams;
use spechop::trace::{generate_trace, load_trace, replay, write_trace};
use spechop::verifier::{verify, VerifierConfig};

use crate::output::{object, Format, Report, SCHEDULER_ASSUMPTIONS};
use crate::{AssertionFailed, Cli, Command, GlobalArgs, PolicyName, ProfileArgs, UsageError};

pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    let mut failure: Option<AssertionFailed> = None;
    let report = match &cli.command {
        Command::Analyze {
            p,
            alpha,
            beta,
            k,
            n_hops,
            nu,
            eps,
        } => {
            let inputs = AnalyticInputs {
                nu: *nu,
                eps: *eps,
                ..AnalyticInputs::new(*p, *alpha, *beta, *k, *n_hops)
            };
            let report = analyze(inputs)?;
            Report::new("analyze", object(inputs)?, object(&report)?)
        }
        Command::Capacity { alpha, beta, nu, eps } => {
            let k_star = risk_adjusted_capacity(*alpha, *beta, *nu, *eps)?;
            let result = json!({
                "k_det": deterministic_capacity(*alpha, *beta),
                "k_star": k_star,
                "starvation_bound_at_k_star": starvation_bound(k_star as f64, *alpha, *beta, *nu),
            });
            let config = json!({"alpha": alpha, "beta": beta, "nu": nu, "eps": eps});
            Report::new("capacity", config, result)
        }
        Command::Simulate {
            profile,
            n_hops,
            policy,
            k,
            trials,
            fixed_per_hop,
            assert_theory,
            tolerance,
        } => {
            let params = resolve_profile(profile)?;
            let built = params.build()?;
            let policy = make_policy(*policy, *k)?;
            let cfg = McConfig {
                resample: if *fixed_per_hop {
                    ResamplePolicy::FixedPerHop
                } else {
                    ResamplePolicy::FreshPerAttempt
                },
                jobs: g.jobs,
                ..McConfig::new(*n_hops, policy, *trials, g.seed)
            };
            let stats = monte_carlo(&built, &cfg)?;
            let inputs = AnalyticInputs {
                nu: params.nu,
                target_mean_s: params.target_mean_s,
                ..AnalyticInputs::new(params.p, params.alpha, params.beta, policy.window(), *n_hops as u64)
            };
            let theory = compare_to_theory(&stats, &analyze(inputs)?, *tolerance)?;
            if *assert_theory && !theory.pass {
                failure = Some(AssertionFailed(format!(
                    "observed relative latency {} deviates from {} by {} (tolerance {})",
                    theory.observed_rel_lat, theory.predicted_rel_lat, theory.deviation, theory.tolerance
                )));
            }
            let config = json!({
                "profile": params,
                "n_hops": n_hops,
                "policy": policy.name(),
                "k": policy.window().to_string(),
                "trials": trials,
                "seed": g.seed,
                "resample": cfg.resample,
                "tolerance": tolerance,
            });
            Report::new("simulate", config, json!({"stats": stats, "theory": theory}))
                .with_assumptions(SCHEDULER_ASSUMPTIONS)
        }
        Command::Replay {
            trace,
            policy,
            k,
            verifier_config,
        } => {
            let verifier = load_verifier(verifier_config.as_deref())?;
            let policy = make_policy(*policy, *k)?;
            let queries = load_trace(trace, &verifier)?;
            let report = replay(&queries, &policy, &verifier)?;
            let csv = report.to_csv()?;
            let config = json!({
                "trace": trace.display().to_string(),
                "policy": policy.name(),
                "k": policy.window().to_string(),
                "verifier_fingerprint": report.verifier_fingerprint,
            });
            Report::new("replay", config, object(&report)?)
                .with_csv(csv)
                .with_assumptions(SCHEDULER_ASSUMPTIONS)
        }
        Command::Sweep {
            axis,
            grid,
            profile,
            policy,
            k,
            n_hops,
            trials,
            cache_anchors,
        } => {
            let params = resolve_profile(profile)?;
            let cache = cache_anchors.as_deref().map(CacheMapping::parse).transpose()?;
            let spec = SweepSpec {
                axis: *axis,
                grid: grid.split(',').map(|s| s.trim().to_string()).collect(),
                base: params,
                policy: policy.as_str().to_string(),
                k: *k,
                n_hops: *n_hops,
                trials: *trials,
                seed: g.seed,
                jobs: g.jobs,
                cache: cache.clone(),
            };
            let rows = sweep(&spec)?;
            let config = json!({
                "axis": axis.as_str(),
                "grid": spec.grid,
                "profile": params,
                "policy": policy.as_str(),
                "k": k.to_string(),
                "n_hops": n_hops,
                "trials": trials,
                "seed": g.seed,
                "cache_anchors": cache,
            });
            Report::new("sweep", config, json!({ "rows": rows }))
                .with_csv(sweep_csv(&rows)?)
                .with_assumptions(SCHEDULER_ASSUMPTIONS)
        }
        Command::Verify {
            target,
            spec,
            batch,
            config,
        } => {
            let cfg = load_verifier(config.as_deref())?;
            let config_json = json!({
                "verifier_fingerprint": cfg.fingerprint(),
                "batch": batch.as_ref().map(|b| b.display().to_string()),
            });
            match (target, spec, batch) {
                (Some(t), Some(s), None) => {
                    let d = verify(t, s, &cfg);
                    let result = json!({
                        "decision": d.to_string(),
                        "accepted": d.accepted,
                        "rule_fired": d.rule_fired,
                    });
                    if g.format == Format::Text {
                        // A single decision prints as one line.
                        return emit(g, &format!("{d}\n"), stdout, stderr, None);
                    }
                    Report::new("verify", config_json, result)
                }
                (None, None, Some(path)) => verify_batch(path, &cfg, config_json)?,
                _ => return Err(UsageError("verify needs --target and --spec, or --batch".into()).into()),
            }
        }
        Command::Live {
            profile,
            n_hops,
            policy,
            k,
            time_scale,
            worker_cap,
            assert_tolerance,
        } => {
            let params = resolve_profile(profile)?;
            let policy = make_policy(*policy, *k)?;
            let cfg = LiveConfig {
                time_scale: *time_scale,
                worker_cap: *worker_cap,
            };
            let report = live_run(&params.build()?, *n_hops, &policy, g.seed, &cfg)?;
            if *assert_tolerance && !report.within_tolerance {
                failure = Some(AssertionFailed(format!(
                    "measured wall {} vs simulated {} exceeds tolerance {}",
                    report.measured_wall, report.expected_wall, report.tolerance
                )));
            }
            let mut result = json!({
                "policy": report.result.policy,
                "k": report.result.k,
                "expected_wall": report.expected_wall,
                "tolerance": report.tolerance,
                "within_tolerance": report.within_tolerance,
                "committed_sequence": report.result.committed_sequence,
                "calls_model": report.result.calls_model,
                "calls_target": report.result.calls_target,
                "calls_spec": report.result.calls_spec,
                "rollbacks": report.result.rollbacks,
            });
            // Timings vary run to run; --quiet keeps the output reproducible.
            if !g.quiet {
                result["measured_wall"] = json!(report.measured_wall);
                result["measured_real_s"] = json!(report.measured_real_s);
            }
            let config = json!({
                "profile": params,
                "n_hops": n_hops,
                "policy": policy.name(),
                "k": policy.window().to_string(),
                "seed": g.seed,
                "time_scale": time_scale,
                "worker_cap": worker_cap,
            });
            Report::new("live", config, result).with_assumptions(SCHEDULER_ASSUMPTIONS)
        }
        Command::GenTrace {
            profile,
            n_hops,
            queries,
        } => {
            let params = resolve_profile(profile)?;
            let trace = generate_trace(&params.build()?, *n_hops, *queries, g.seed)?;
            let config = json!({"profile": params, "n_hops": n_hops, "queries": queries, "seed": g.seed});
            let fingerprint = Report::new("gen-trace", config, Value::Null).fingerprint();
            return emit(g, &write_trace(&trace), stdout, stderr, Some(&fingerprint));
        }
    };

    let text = report.render(g.format)?;
    let banner = (g.format == Format::Csv).then(|| report.fingerprint());
    emit(g, &text, stdout, stderr, banner.as_deref())?;
    match failure {
        Some(f) => Err(f.into()),
        None => Ok(()),
    }
}

/// Writes the rendered output; a fingerprint not embedded in it goes to stderr.
fn emit(g: &GlobalArgs, text: &str, stdout: &mut dyn Write, stderr: &mut dyn Write, fingerprint: Option<&str>) -> Result<()> {
    if let (Some(fp), false) = (fingerprint, g.quiet) {
        writeln!(stderr, "fingerprint: {fp}")?;
    }
    match &g.output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn make_policy(name: PolicyName, k: Window) -> Result<Policy> {
    let window = match name {
        PolicyName::Sequential | PolicyName::FullSpeculation => Window::Threads(1),
        _ => k,
    };
    Ok(Policy::parse(name.as_str(), window)?)
}

/// Merges a `--profile` file with explicit flags (flags win).
fn resolve_profile(args: &ProfileArgs) -> Result<ProfileParams> {
    let mut params = match &args.profile {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ProfileParams::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let need = |v: Option<f64>, flag: &str| {
                v.ok_or_else(|| UsageError(format!("missing --{flag} (or pass --profile)")))
            };
            ProfileParams::new(
                need(args.p, "p")?,
                need(args.alpha, "alpha")?,
                need(args.beta, "beta")?,
                0.4,
                1.0,
            )
        }
    };
    if let Some(p) = args.p {
        params.p = p;
    }
    if let Some(a) = args.alpha {
        params.alpha = a;
    }
    if let Some(b) = args.beta {
        params.beta = b;
    }
    if let Some(nu) = args.nu {
        params.nu = nu;
    }
    if let Some(m) = args.target_mean {
        params.target_mean_s = m;
    }
    if let Some(kind) = args.dist {
        params.kind = kind;
    }
    params.allow_slow_speculator |= args.allow_slow_speculator;
    params.build()?;
    Ok(params)
}

fn load_verifier(path: Option<&Path>) -> Result<VerifierConfig> {
    match path {
        None => Ok(VerifierConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            VerifierConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

#[derive(Deserialize)]
struct PairRecord {
    #[serde(alias = "target")]
    target_obs: String,
    #[serde(alias = "spec")]
    spec_obs: String,
}

fn verify_batch(path: &Path, cfg: &VerifierConfig, config: Value) -> Result<Report> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["line", "accepted", "rule_fired"])?;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let pair: PairRecord = serde_json::from_str(raw)
            .map_err(|e| spechop::Error::Trace {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        let d = verify(&pair.target_obs, &pair.spec_obs, cfg);
        csv.write_record([(i + 1).to_string(), d.accepted.to_string(), d.rule_fired.to_string()])?;
        rows.push(json!({"line": i + 1, "accepted": d.accepted, "rule_fired": d.rule_fired}));
    }
    if rows.is_empty() {
        return Err(spechop::Error::EmptyTrace.into());
    }
    let accepted = rows.iter().filter(|r| r["accepted"] == json!(true)).count();
    let result = json!({
        "pairs": rows.len(),
        "accept_rate": accepted as f64 / rows.len() as f64,
        "decisions": rows,
    });
    let csv = String::from_utf8(csv.into_inner()?)?;
    Ok(Report::new("verify", config, result).with_csv(csv))
}
