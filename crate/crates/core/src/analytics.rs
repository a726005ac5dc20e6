//! Closed-form latency model for speculative multi-hop execution.
//!
//! All ratios are normalized by the mean target-tool latency:
//! `alpha = E[T_spec] / E[T_target]`, `beta = E[T_seg] / E[T_target]`.
//! `p` is the probability that a speculative observation is accepted.
//!
//! Quantities exposed here:
//!
//! - oracle hop latency and its relative latency against sequential execution;
//! - the bounded-window round model: round weights `w_j`, expected hops per
//!   round `mu_k`, per-hop rate `lambda_k` and `L_k(N) = N * lambda_k`
//!   (the constant term of the renewal argument is not included);
//! - the starvation bound for `k` active threads under a normal approximation
//!   of the window-build race, and the thread capacities derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::SystemProfile;

/// Expected latency of one hop when speculation outcomes are known instantly.
pub fn oracle_hop_latency(profile: &SystemProfile) -> f64 {
    let p = profile.p();
    profile.seg().mean() + p * profile.spec().mean() + (1.0 - p) * profile.target().mean()
}

/// Relative latency of oracle speculation versus sequential execution.
pub fn oracle_rel_lat(p: f64, alpha: f64, beta: f64) -> f64 {
    1.0 - p * (1.0 - alpha) / (1.0 + beta)
}

/// Probability that one bounded-window round advances exactly `j` hops,
/// for `j = 1..=k`.
pub fn window_weights(p: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::param("k", "window size must be at least 1"));
    }
    let mut weights = Vec::with_capacity(k);
    let mut reach = 1.0; // p^(j-1)
    for _ in 1..k {
        weights.push(reach * (1.0 - p));
        reach *= p;
    }
    weights.push(reach);
    Ok(weights)
}

/// Expected number of hops advanced in one round of a window of size `k`.
///
/// Evaluated as `(1 - p^k) / (1 - p)`; at `p = 1` the limit `k` is returned.
pub fn window_advance_mean(p: f64, k: u64) -> f64 {
    if p >= 1.0 {
        return k as f64;
    }
    if p <= 0.0 || k <= 1 {
        return 1.0;
    }
    -((k as f64) * p.ln()).exp_m1() / (1.0 - p)
}

/// Expected hops per round for an unbounded window: `1 / (1 - p)`.
fn unbounded_advance_mean(p: f64) -> f64 {
    if p >= 1.0 {
        f64::INFINITY
    } else {
        1.0 / (1.0 - p)
    }
}

fn rate_from_mu(seg: f64, spec: f64, target: f64, mu: f64) -> f64 {
    if mu.is_infinite() {
        return seg + spec;
    }
    seg + (mu - 1.0) / mu * spec + target / mu
}

/// Per-hop rate `lambda_k` and total expected latency `N * lambda_k` of the
/// bounded-window algorithm.
pub fn bounded_expected_latency(profile: &SystemProfile, k: u64, n_hops: u64) -> (f64, f64) {
    let mu = window_advance_mean(profile.p(), k);
    let lambda = rate_from_mu(
        profile.seg().mean(),
        profile.spec().mean(),
        profile.target().mean(),
        mu,
    );
    (lambda, lambda * n_hops as f64)
}

/// Relative latency of the bounded-window algorithm with window `k`.
pub fn bounded_rel_lat(p: f64, alpha: f64, beta: f64, k: u64) -> f64 {
    rel_lat_from_mu(alpha, beta, window_advance_mean(p, k))
}

fn rel_lat_from_mu(alpha: f64, beta: f64, mu: f64) -> f64 {
    // One hop per round is plain sequential execution; avoid rounding noise.
    if mu <= 1.0 {
        return 1.0;
    }
    let tail = if mu.is_infinite() { 0.0 } else { (1.0 - alpha) / mu };
    (beta + alpha + tail) / (1.0 + beta)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF.
///
/// Hart's double-precision rational approximation (as rearranged by West);
/// absolute error below 1e-15 over the real line, and the lower tail is
/// computed directly so relative accuracy holds far into it.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let z = x.abs();
    let tail = if z > 37.0 {
        0.0
    } else {
        let e = (-z * z / 2.0).exp();
        if z < 7.071_067_811_865_47 {
            let num = (((((0.035_262_496_599_891_1 * z + 0.700_383_064_443_688) * z
                + 6.373_962_203_531_65)
                * z
                + 33.912_866_078_383)
                * z
                + 112.079_291_497_871)
                * z
                + 221.213_596_169_931)
                * z
                + 220.206_867_912_376;
            let den = ((((((0.088_388_347_648_318_4 * z + 1.755_667_163_182_64) * z
                + 16.064_177_579_207)
                * z
                + 86.780_732_202_946_1)
                * z
                + 296.564_248_779_674)
                * z
                + 637.333_633_378_831)
                * z
                + 793.826_512_519_948)
                * z
                + 440.413_735_824_752;
            e * num / den
        } else {
            let b = z + 1.0 / (z + 2.0 / (z + 3.0 / (z + 4.0 / (z + 0.65))));
            e / b / 2.506_628_274_631
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`normal_cdf`].
///
/// Bisection brackets the root, then Newton steps polish it. Quantiles of
/// `q > 0.5` are computed through the lower tail by symmetry.
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param("q", format!("quantile level must be in (0, 1), got {q}")));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    if q > 0.5 {
        return Ok(-lower_quantile(1.0 - q));
    }
    Ok(lower_quantile(q))
}

fn lower_quantile(q: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = normal_pdf(x);
        if d <= 0.0 {
            break;
        }
        let step = (normal_cdf(x) - q) / d;
        let next = x - step;
        if !(lo..=hi).contains(&next) {
            break;
        }
        x = next;
    }
    x
}

/// Bound on the probability that `k` active threads run out of work before
/// the earliest target call resolves.
///
/// `k` may be fractional. With `nu = 0` the bound degenerates to a step:
/// 1 when the deterministic buffer is negative, 0 when positive, 0.5 at the
/// boundary.
pub fn starvation_bound(k: f64, alpha: f64, beta: f64, nu: f64) -> f64 {
    let numerator = (1.0 + beta) - k * (alpha + beta);
    if nu <= 0.0 {
        return if numerator > 0.0 {
            1.0
        } else if numerator < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    let spread = nu * (k * alpha * alpha + (k - 1.0) * beta * beta + 1.0).sqrt();
    normal_cdf(numerator / spread)
}

/// Thread count at which the expected speculative buffer exactly covers one
/// target call: `(1 + beta) / (alpha + beta)`.
pub fn deterministic_capacity(alpha: f64, beta: f64) -> f64 {
    (1.0 + beta) / (alpha + beta)
}

/// Smallest window that keeps the starvation probability near `eps` under
/// latency volatility `nu`.
pub fn risk_adjusted_capacity(alpha: f64, beta: f64, nu: f64, eps: f64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", format!("must be in (0, 1), got {eps}")));
    }
    let k_det = deterministic_capacity(alpha, beta);
    let z = normal_quantile(1.0 - eps)?;
    let spread = (k_det * alpha * alpha + (k_det - 1.0) * beta * beta + 1.0).sqrt();
    let k = k_det + z * nu * spread / (alpha + beta);
    Ok(k.ceil().max(1.0) as u64)
}

/// Thread limit of a speculative policy; `Unbounded` lets the frontier run ahead freely.
/// Serialized as its text form: `"inf"` or the thread count as a string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Window {
    Threads(usize),
    Unbounded,
}

impl Window {
    pub fn threads(self) -> Option<usize> {
        match self {
            Window::Threads(k) => Some(k),
            Window::Unbounded => None,
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Window::Threads(k) => write!(f, "{k}"),
            Window::Unbounded => f.write_str("inf"),
        }
    }
}

impl From<Window> for String {
    fn from(w: Window) -> String {
        w.to_string()
    }
}

impl TryFrom<String> for Window {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "unbounded" => Ok(Window::Unbounded),
            other => match other.parse::<usize>() {
                Ok(0) => Err(Error::param("k", "window size must be at least 1")),
                Ok(k) => Ok(Window::Threads(k)),
                Err(_) => Err(Error::param("k", format!("expected a positive integer or `inf`, got `{other}`"))),
            },
        }
    }
}

/// Inputs to [`analyze`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticInputs {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k: Window,
    pub n_hops: u64,
    pub nu: f64,
    pub eps: f64,
    /// Mean target-tool latency; latencies in the report are in these units.
    pub target_mean_s: f64,
}

impl AnalyticInputs {
    pub fn new(p: f64, alpha: f64, beta: f64, k: Window, n_hops: u64) -> Self {
        AnalyticInputs {
            p,
            alpha,
            beta,
            k,
            n_hops,
            nu: 0.4,
            eps: 0.05,
            target_mean_s: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::param("p", format!("must be in [0, 1], got {}", self.p)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", format!("must be positive, got {}", self.beta)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::param("nu", format!("must be non-negative, got {}", self.nu)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::param("eps", format!("must be in (0, 1), got {}", self.eps)));
        }
        if !(self.target_mean_s > 0.0 && self.target_mean_s.is_finite()) {
            return Err(Error::param("target_mean_s", "must be positive"));
        }
        if self.n_hops == 0 {
            return Err(Error::param("n_hops", "must be at least 1"));
        }
        if self.k == Window::Threads(0) {
            return Err(Error::param("k", "window size must be at least 1"));
        }
        Ok(())
    }
}

/// Every closed-form quantity for one `(p, alpha, beta, k, N)` setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub inputs: AnalyticInputs,
    pub oracle_rel_lat: f64,
    pub rel_lat_k: f64,
    pub mu_k: f64,
    pub lambda_k: f64,
    pub expected_latency: f64,
    pub starvation_bound: f64,
    pub k_det: f64,
    pub k_star: u64,
}

pub fn analyze(inputs: AnalyticInputs) -> Result<AnalyticReport> {
    inputs.validate()?;
    let AnalyticInputs {
        p, alpha, beta, k, n_hops, nu, eps, target_mean_s,
    } = inputs;
    let mu = match k {
        Window::Threads(k) => window_advance_mean(p, k as u64),
        Window::Unbounded => unbounded_advance_mean(p),
    };
    let lambda = rate_from_mu(beta * target_mean_s, alpha * target_mean_s, target_mean_s, mu);
    let starvation = match k {
        Window::Threads(k) if nu > 0.0 => starvation_bound(k as f64, alpha, beta, nu),
        Window::Threads(k) => starvation_bound(k as f64, alpha, beta, 0.0),
        Window::Unbounded => 0.0,
    };
    Ok(AnalyticReport {
        inputs,
        oracle_rel_lat: oracle_rel_lat(p, alpha, beta),
        rel_lat_k: rel_lat_from_mu(alpha, beta, mu),
        mu_k: mu,
        lambda_k: lambda,
        expected_latency: lambda * n_hops as f64,
        starvation_bound: starvation,
        k_det: deterministic_capacity(alpha, beta),
        k_star: risk_adjusted_capacity(alpha, beta, nu, eps)?,
    })
}
