//! Monte Carlo estimation, parameter sweeps and theory comparison.
//!
//! Every trial draws its instance from its own substream `(seed, trial)`, so
//! results do not depend on how trials are spread over threads; reductions run
//! sequentially in trial order. Policy and sequential walls are computed on
//! the same instance (common random numbers).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{bounded_rel_lat, oracle_rel_lat, AnalyticReport, Window};
use crate::engine::{run, run_sequential, Instance, Policy, ResamplePolicy};
use crate::error::{Error, Result};
use crate::profile::{ProfileParams, Substream, SystemProfile};

/// Settings of one Monte Carlo batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_hops: usize,
    pub policy: Policy,
    pub trials: usize,
    pub seed: u64,
    pub resample: ResamplePolicy,
    /// Worker threads; 0 uses the global rayon pool.
    pub jobs: usize,
}

impl McConfig {
    pub fn new(n_hops: usize, policy: Policy, trials: usize, seed: u64) -> Self {
        McConfig {
            n_hops,
            policy,
            trials,
            seed,
            resample: ResamplePolicy::FreshPerAttempt,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanCalls {
    pub model: f64,
    pub target: f64,
    pub spec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub trials: usize,
    pub n_hops: usize,
    pub policy: String,
    pub k: String,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub seed: u64,
    pub mean_rel_lat: f64,
    pub ci95_half_width: f64,
    /// Mean over trials of starved rounds per hop (continuous policies only).
    pub starvation_freq: f64,
    pub mean_calls: MeanCalls,
    pub mean_rollbacks: f64,
    pub mean_wall: f64,
    pub mean_wall_seq: f64,
    /// SHA-256 over the profile and batch settings.
    pub fingerprint: String,
}

impl McStats {
    pub fn mean_wall_per_hop(&self) -> f64 {
        self.mean_wall / self.n_hops as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Trial {
    rel_lat: f64,
    wall: f64,
    wall_seq: f64,
    starved: f64,
    calls: (f64, f64, f64),
    rollbacks: f64,
}

fn fingerprint(params: &ProfileParams, cfg: &McConfig) -> String {
    let mut h = Sha256::new();
    h.update(params.to_json());
    h.update(format!(
        "\nn={};policy={};k={};trials={};seed={};resample={:?}",
        cfg.n_hops,
        cfg.policy.name(),
        cfg.policy.window(),
        cfg.trials,
        cfg.seed,
        cfg.resample
    ));
    hex::encode(h.finalize())
}

/// Maps `f` over `0..n` in parallel and returns results in index order.
fn par_indexed<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let work = || (0..n).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    if jobs == 0 {
        return work();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    pool.install(work)
}

fn mean_and_ci(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, 1.96 * (var / nf).sqrt())
}

pub fn monte_carlo(profile: &SystemProfile, cfg: &McConfig) -> Result<McStats> {
    if cfg.trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    if cfg.n_hops == 0 {
        return Err(Error::param("n_hops", "must be at least 1"));
    }
    let root = Substream::root(cfg.seed);
    let trials = par_indexed(cfg.trials, cfg.jobs, |t| {
        let instance = Instance::sample(profile, cfg.n_hops, root.child(t as u64), cfg.resample)?;
        let (seq, _) = run_sequential(&instance);
        let (res, _) = run(&instance, &cfg.policy)?;
        Ok(Trial {
            rel_lat: res.wall_clock / seq.wall_clock,
            wall: res.wall_clock,
            wall_seq: seq.wall_clock,
            starved: res.starved_rounds as f64 / cfg.n_hops as f64,
            calls: (res.calls_model as f64, res.calls_target as f64, res.calls_spec as f64),
            rollbacks: res.rollbacks as f64,
        })
    })?;

    let n = trials.len();
    let nf = n as f64;
    let (mean_rel_lat, ci) = mean_and_ci(trials.iter().map(|t| t.rel_lat), n);
    let avg = |f: fn(&Trial) -> f64| trials.iter().map(f).sum::<f64>() / nf;
    let params = profile.params();
    Ok(McStats {
        trials: n,
        n_hops: cfg.n_hops,
        policy: cfg.policy.name().to_string(),
        k: cfg.policy.window().to_string(),
        p: params.p,
        alpha: params.alpha,
        beta: params.beta,
        nu: params.nu,
        seed: cfg.seed,
        mean_rel_lat,
        ci95_half_width: ci,
        starvation_freq: avg(|t| t.starved),
        mean_calls: MeanCalls {
            model: avg(|t| t.calls.0),
            target: avg(|t| t.calls.1),
            spec: avg(|t| t.calls.2),
        },
        mean_rollbacks: avg(|t| t.rollbacks),
        mean_wall: avg(|t| t.wall),
        mean_wall_seq: avg(|t| t.wall_seq),
        fingerprint: fingerprint(&params, cfg),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarvationEstimate {
    pub k: usize,
    pub trials: usize,
    pub frequency: f64,
    pub ci95_half_width: f64,
}

/// Frequency of the window-build race in which `k` speculator calls and
/// `k - 1` segments finish before one target call.
pub fn estimate_starvation(profile: &SystemProfile, k: usize, trials: usize, seed: u64, jobs: usize) -> Result<StarvationEstimate> {
    if profile.nu() == 0.0 {
        return Err(Error::param(
            "nu",
            "starvation frequency needs a stochastic profile; compare k*spec + (k-1)*seg with target instead",
        ));
    }
    if k == 0 {
        return Err(Error::param("k", "window size must be at least 1"));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let root = Substream::root(seed);
    let hits = par_indexed(trials, jobs, |t| {
        let mut rng = root.child(t as u64).rng();
        let mut built = 0.0;
        for _ in 0..k {
            built += profile.spec().sample(&mut rng);
        }
        for _ in 1..k {
            built += profile.seg().sample(&mut rng);
        }
        let target = profile.target().sample(&mut rng);
        Ok(built < target)
    })?;
    let count = hits.iter().filter(|&&h| h).count() as f64;
    let n = trials as f64;
    let frequency = count / n;
    Ok(StarvationEstimate {
        k,
        trials,
        frequency,
        ci95_half_width: 1.96 * (frequency * (1.0 - frequency) / n).sqrt(),
    })
}

/// Monotone piecewise-linear map from cache fraction to speculator success rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMapping {
    anchors: Vec<(f64, f64)>,
}

impl CacheMapping {
    pub fn new(mut anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::param("cache_anchors", "need at least one (fraction, p) pair"));
        }
        anchors.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(f, p) in &anchors {
            if !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&p) {
                return Err(Error::param("cache_anchors", format!("pair ({f}, {p}) outside [0, 1]")));
            }
        }
        for w in anchors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::param("cache_anchors", format!("fraction {} given twice", w[0].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::param("cache_anchors", "p must not decrease as the cache grows"));
            }
        }
        Ok(CacheMapping { anchors })
    }

    /// Parses `f:p,f:p,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = text
            .split(',')
            .map(|pair| {
                let (f, p) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::param("cache_anchors", format!("`{pair}` is not fraction:p")))?;
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::param("cache_anchors", format!("`{s}`: {e}")))
                };
                Ok((num(f)?, num(p)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs)
    }

    /// Interpolated success rate; clamps outside the anchor range.
    pub fn p_at(&self, fraction: f64) -> f64 {
        let a = &self.anchors;
        if fraction <= a[0].0 {
            return a[0].1;
        }
        for w in a.windows(2) {
            let ((f0, p0), (f1, p1)) = (w[0], w[1]);
            if fraction <= f1 {
                return p0 + (p1 - p0) * (fraction - f0) / (f1 - f0);
            }
        }
        a[a.len() - 1].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    P,
    Alpha,
    Beta,
    Nu,
    CacheFraction,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::P => "p",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::Nu => "nu",
            SweepAxis::CacheFraction => "cache_fraction",
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "k" => SweepAxis::K,
            "p" => SweepAxis::P,
            "alpha" => SweepAxis::Alpha,
            "beta" => SweepAxis::Beta,
            "nu" => SweepAxis::Nu,
            "cache_fraction" | "cache-fraction" => SweepAxis::CacheFraction,
            other => return Err(Error::param("axis", format!("unknown sweep axis `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Grid values as text: windows (`inf` allowed) for `k`, numbers otherwise.
    pub grid: Vec<String>,
    pub base: ProfileParams,
    pub policy: String,
    /// Window used when the axis is not `k`.
    pub k: Window,
    pub n_hops: usize,
    pub trials: usize,
    pub seed: u64,
    pub jobs: usize,
    pub cache: Option<CacheMapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub mean_rel_lat: f64,
    pub ci95: f64,
    pub analytic_rel_lat: f64,
    pub starvation_freq: f64,
    pub calls_model: f64,
    pub calls_target: f64,
    pub calls_spec: f64,
}

/// Closed-form relative latency matching a policy.
pub fn analytic_rel_lat(policy: &Policy, p: f64, alpha: f64, beta: f64) -> f64 {
    match *policy {
        Policy::Sequential => 1.0,
        Policy::FullSpeculation => (alpha + beta) / (1.0 + beta),
        Policy::Bounded { k, .. } => bounded_rel_lat(p, alpha, beta, k as u64),
        Policy::Continuous {
            window: Window::Threads(k),
        } => bounded_rel_lat(p, alpha, beta, k as u64),
        Policy::Continuous {
            window: Window::Unbounded,
        } => oracle_rel_lat(p, alpha, beta),
    }
}

pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.grid.is_empty() {
        return Err(Error::param("grid", "must not be empty"));
    }
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| Error::param("grid", format!("`{v}`: {e}")))
    };
    let mut rows = Vec::with_capacity(spec.grid.len());
    for value in &spec.grid {
        let mut params = spec.base;
        let mut window = spec.k;
        match spec.axis {
            SweepAxis::K => window = value.parse()?,
            SweepAxis::P => params.p = num(value)?,
            SweepAxis::Alpha => params.alpha = num(value)?,
            SweepAxis::Beta => params.beta = num(value)?,
            SweepAxis::Nu => params.nu = num(value)?,
            SweepAxis::CacheFraction => {
                let mapping = spec
                    .cache
                    .as_ref()
                    .ok_or_else(|| Error::param("cache_anchors", "the cache_fraction axis needs anchor pairs"))?;
                params.p = mapping.p_at(num(value)?);
            }
        }
        let profile = params.build()?;
        let policy = Policy::parse(&spec.policy, window)?;
        let mut cfg = McConfig::new(spec.n_hops, policy, spec.trials, spec.seed);
        cfg.jobs = spec.jobs;
        let mc = monte_carlo(&profile, &cfg)?;
        rows.push(SweepRow {
            axis: spec.axis.to_string(),
            value: value.trim().to_string(),
            mean_rel_lat: mc.mean_rel_lat,
            ci95: mc.ci95_half_width,
            analytic_rel_lat: analytic_rel_lat(&policy, params.p, params.alpha, params.beta),
            starvation_freq: mc.starvation_freq,
            calls_model: mc.mean_calls.model,
            calls_target: mc.mean_calls.target,
            calls_spec: mc.mean_calls.spec,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(crate::trace::csv_error)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::trace::csv_error(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryComparison {
    pub policy: String,
    pub k: String,
    pub predicted_rel_lat: f64,
    pub observed_rel_lat: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub predicted_wall_per_hop: f64,
    pub observed_wall_per_hop: f64,
    pub pass: bool,
}

/// Side-by-side Monte Carlo and closed-form values.
///
/// Without an explicit `tolerance`, the allowance is the finite-horizon term
/// `1 / (N (1 + beta))` plus three CI half-widths.
pub fn compare_to_theory(mc: &McStats, analytic: &AnalyticReport, tolerance: Option<f64>) -> Result<TheoryComparison> {
    let a = &analytic.inputs;
    // Profile ratios are recomputed from stage means, so allow rounding noise.
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
    let matches = close(mc.p, a.p)
        && close(mc.alpha, a.alpha)
        && close(mc.beta, a.beta)
        && mc.k == a.k.to_string()
        && mc.n_hops as u64 == a.n_hops;
    if !matches {
        let mc_key = format!("p={};alpha={};beta={};k={};n={}", mc.p, mc.alpha, mc.beta, mc.k, mc.n_hops);
        let an_key = format!("p={};alpha={};beta={};k={};n={}", a.p, a.alpha, a.beta, a.k, a.n_hops);
        return Err(Error::ConfigMismatch(format!("monte carlo [{mc_key}] vs analytic [{an_key}]")));
    }
    let policy = Policy::parse(&mc.policy, a.k)?;
    let predicted = analytic_rel_lat(&policy, a.p, a.alpha, a.beta);
    let tolerance = tolerance.unwrap_or(1.0 / (mc.n_hops as f64 * (1.0 + a.beta)) + 3.0 * mc.ci95_half_width);
    let deviation = (mc.mean_rel_lat - predicted).abs();
    Ok(TheoryComparison {
        policy: mc.policy.clone(),
        k: mc.k.clone(),
        predicted_rel_lat: predicted,
        observed_rel_lat: mc.mean_rel_lat,
        deviation,
        tolerance,
        predicted_wall_per_hop: predicted * (1.0 + a.beta) * a.target_mean_s,
        observed_wall_per_hop: mc.mean_wall_per_hop(),
        pass: deviation <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{analyze, AnalyticInputs};
    use crate::engine::BoundedMode;
    use crate::profile::make_profile;

    fn analytic_k(k: usize) -> Policy {
        Policy::Bounded {
            k,
            mode: BoundedMode::AnalyticRound,
        }
    }

    #[test]
    fn p_zero_is_sequential() {
        let profile = make_profile(0.0, 0.2, 0.1, 0.0, 10.0).unwrap();
        for policy in [analytic_k(3), Policy::Continuous { window: Window::Unbounded }] {
            let mc = monte_carlo(&profile, &McConfig::new(20, policy, 50, 1)).unwrap();
            assert_eq!(mc.mean_rel_lat, 1.0);
            assert_eq!(mc.ci95_half_width, 0.0);
        }
    }

    #[test]
    fn results_do_not_depend_on_jobs() {
        let profile = make_profile(0.6, 0.25, 0.15, 0.4, 1.0).unwrap();
        let policy = Policy::Continuous {
            window: Window::Threads(3),
        };
        let mut cfg = McConfig::new(15, policy, 64, 7);
        let reference = monte_carlo(&profile, &cfg).unwrap();
        for jobs in [1, 3] {
            cfg.jobs = jobs;
            assert_eq!(monte_carlo(&profile, &cfg).unwrap(), reference);
        }
        assert!(reference.ci95_half_width > 0.0);
        assert!((0.0..=1.0).contains(&reference.starvation_freq));
    }

    #[test]
    fn paired_runs_never_lose_without_noise() {
        let profile = make_profile(0.5, 0.2, 0.1, 0.0, 10.0).unwrap();
        let root = Substream::root(3);
        for t in 0..200u64 {
            let inst = Instance::sample(&profile, 12, root.child(t), ResamplePolicy::FreshPerAttempt).unwrap();
            let (seq, _) = run_sequential(&inst);
            for k in 1..5 {
                let (r, _) = run(&inst, &analytic_k(k)).unwrap();
                assert!(r.wall_clock <= seq.wall_clock + 1e-9);
            }
        }
    }

    #[test]
    fn starvation_race_deterministic_cases() {
        let deterministic = make_profile(0.5, 0.2, 0.15, 0.0, 1.0).unwrap();
        assert!(estimate_starvation(&deterministic, 3, 10, 1, 0).is_err());
        let noisy = make_profile(0.5, 0.2, 0.15, 0.4, 1.0).unwrap();
        let a = estimate_starvation(&noisy, 3, 5000, 1, 0).unwrap();
        let b = estimate_starvation(&noisy, 6, 5000, 1, 0).unwrap();
        assert!(b.frequency < a.frequency);
        assert_eq!(estimate_starvation(&noisy, 3, 5000, 1, 2).unwrap(), a);
    }

    #[test]
    fn cache_mapping_interpolates() {
        let m = CacheMapping::parse("0.05:0.3, 0.25:0.7,0.15:0.5").unwrap();
        assert_eq!(m.p_at(0.0), 0.3);
        assert!((m.p_at(0.10) - 0.4).abs() < 1e-12);
        assert!((m.p_at(0.20) - 0.6).abs() < 1e-12);
        assert_eq!(m.p_at(0.9), 0.7);
        assert!(CacheMapping::parse("0.1:0.5,0.2:0.4").is_err());
        assert!(CacheMapping::parse("0.1").is_err());
        assert!(CacheMapping::parse("").is_err());
    }

    #[test]
    fn sweep_over_k_is_monotone() {
        let spec = SweepSpec {
            axis: SweepAxis::K,
            grid: ["1", "2", "3", "5", "10", "inf"].map(String::from).to_vec(),
            base: ProfileParams::new(0.6, 0.2, 0.1, 0.3, 1.0),
            policy: "continuous".into(),
            k: Window::Unbounded,
            n_hops: 20,
            trials: 200,
            seed: 11,
            jobs: 0,
            cache: None,
        };
        let rows = sweep(&spec).unwrap();
        assert_eq!(rows[0].mean_rel_lat, 1.0);
        for w in rows.windows(2) {
            assert!(w[1].mean_rel_lat <= w[0].mean_rel_lat + 1e-12, "{w:?}");
            assert!(w[1].analytic_rel_lat <= w[0].analytic_rel_lat);
        }
        let csv = sweep_csv(&rows).unwrap();
        assert!(csv.starts_with(
            "axis,value,mean_rel_lat,ci95,analytic_rel_lat,starvation_freq,calls_model,calls_target,calls_spec\n"
        ));
    }

    #[test]
    fn theory_comparison_checks_configuration() {
        let profile = make_profile(0.5, 0.2, 0.1, 0.0, 10.0).unwrap();
        let mc = monte_carlo(&profile, &McConfig::new(50, analytic_k(1), 10, 1)).unwrap();
        let report = analyze(AnalyticInputs::new(0.5, 0.2, 0.1, Window::Threads(1), 50)).unwrap();
        let cmp = compare_to_theory(&mc, &report, None).unwrap();
        assert_eq!(cmp.observed_rel_lat, 1.0);
        assert_eq!(cmp.predicted_rel_lat, 1.0);
        assert!(cmp.pass);
        let other = analyze(AnalyticInputs::new(0.5, 0.2, 0.1, Window::Threads(2), 50)).unwrap();
        assert!(matches!(compare_to_theory(&mc, &other, None), Err(Error::ConfigMismatch(_))));
    }
}
