//! Latency distributions, system profiles and seeded sampling.
//!
//! Randomness is counter-based: a [`Substream`] is a 64-bit key derived from
//! the master seed and a path of indices (trial, hop, attempt, ...). Each key
//! seeds its own ChaCha8 generator, so a draw depends only on its key and
//! never on the order in which other draws were made.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::analytics::{normal_cdf, normal_pdf};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    Constant,
    #[default]
    Lognormal,
    TruncatedNormal,
}

impl std::fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistributionKind::Constant => "constant",
            DistributionKind::Lognormal => "lognormal",
            DistributionKind::TruncatedNormal => "truncated-normal",
        })
    }
}

impl std::str::FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(DistributionKind::Constant),
            "lognormal" => Ok(DistributionKind::Lognormal),
            "truncated-normal" => Ok(DistributionKind::TruncatedNormal),
            other => Err(Error::param("kind", format!("unknown distribution kind `{other}`"))),
        }
    }
}

/// A positive stage latency parameterized by its mean and coefficient of variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyDistribution {
    kind: DistributionKind,
    mean: f64,
    cv: f64,
    /// Parameters of the underlying normal: log-space for lognormal, pre-truncation otherwise.
    loc: f64,
    scale: f64,
}

impl LatencyDistribution {
    pub fn constant(mean: f64) -> Result<Self> {
        Self::new(DistributionKind::Constant, mean, 0.0)
    }

    pub fn lognormal(mean: f64, cv: f64) -> Result<Self> {
        Self::new(DistributionKind::Lognormal, mean, cv)
    }

    pub fn truncated_normal(mean: f64, cv: f64) -> Result<Self> {
        Self::new(DistributionKind::TruncatedNormal, mean, cv)
    }

    pub fn new(kind: DistributionKind, mean: f64, cv: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::param("mean", format!("must be positive and finite, got {mean}")));
        }
        if !(cv >= 0.0 && cv.is_finite()) {
            return Err(Error::param("cv", format!("must be non-negative, got {cv}")));
        }
        let (loc, scale) = match kind {
            DistributionKind::Constant => {
                if cv != 0.0 {
                    return Err(Error::param("cv", "constant distribution requires cv = 0"));
                }
                (mean, 0.0)
            }
            DistributionKind::Lognormal => {
                let sigma2 = cv.mul_add(cv, 1.0).ln();
                (mean.ln() - 0.5 * sigma2, sigma2.sqrt())
            }
            DistributionKind::TruncatedNormal => truncated_normal_params(mean, cv)?,
        };
        Ok(LatencyDistribution {
            kind,
            mean,
            cv,
            loc,
            scale,
        })
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn cv(&self) -> f64 {
        self.cv
    }

    /// Parameters `(mu, sigma)` of the underlying normal.
    pub fn underlying(&self) -> (f64, f64) {
        (self.loc, self.scale)
    }

    /// A copy with the same kind and cv but a different mean.
    pub fn with_mean(&self, mean: f64) -> Result<Self> {
        Self::new(self.kind, mean, self.cv)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.scale == 0.0 {
            return self.mean;
        }
        match self.kind {
            DistributionKind::Constant => self.mean,
            DistributionKind::Lognormal => {
                let d = LogNormal::new(self.loc, self.scale).expect("validated parameters");
                // Underflow to zero is astronomically unlikely; keep the positivity contract anyway.
                d.sample(rng).max(f64::MIN_POSITIVE)
            }
            DistributionKind::TruncatedNormal => {
                let d = Normal::new(self.loc, self.scale).expect("validated parameters");
                loop {
                    let x = d.sample(rng);
                    if x > 0.0 {
                        return x;
                    }
                }
            }
        }
    }
}

/// Pre-truncation `(mu, sigma)` of a normal that, truncated to `(0, inf)`,
/// has the requested mean and coefficient of variation.
///
/// With `a = -mu / sigma` and `h = pdf(a) / (1 - cdf(a))`, the truncated
/// distribution has mean `sigma (h - a)` and variance `sigma^2 (1 + a h - h^2)`,
/// so its cv depends on `a` alone and increases with it. `a` is found by
/// bisection, then `sigma` follows from the mean.
fn truncated_normal_params(mean: f64, cv: f64) -> Result<(f64, f64)> {
    if cv == 0.0 {
        return Ok((mean, 0.0));
    }
    if cv >= 0.95 {
        return Err(Error::param(
            "cv",
            format!("truncated-normal supports cv < 0.95, got {cv}"),
        ));
    }
    fn hazard(a: f64) -> f64 {
        // pdf(a) / (1 - cdf(a)) evaluated through the lower tail for stability
        normal_pdf(a) / normal_cdf(-a)
    }
    fn cv_of(a: f64) -> f64 {
        let h = hazard(a);
        (1.0 + a * h - h * h).max(0.0).sqrt() / (h - a)
    }
    let (mut lo, mut hi) = (-60.0_f64, 6.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cv_of(mid) < cv {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let sigma = mean / (hazard(a) - a);
    Ok((-a * sigma, sigma))
}

/// Counter-based random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Substream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Substream {
    pub fn root(seed: u64) -> Self {
        Substream { key: splitmix64(seed) }
    }

    pub fn child(self, index: u64) -> Self {
        Substream {
            key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

/// Latency and accuracy parameterization of one model / tool / speculator triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemProfile {
    seg: LatencyDistribution,
    spec: LatencyDistribution,
    target: LatencyDistribution,
    p: f64,
}

impl SystemProfile {
    /// Builds a profile from explicit stage distributions, rejecting a
    /// speculator that is not faster than the target tool.
    pub fn from_distributions(
        seg: LatencyDistribution,
        spec: LatencyDistribution,
        target: LatencyDistribution,
        p: f64,
    ) -> Result<Self> {
        Self::from_distributions_with(seg, spec, target, p, false)
    }

    pub fn from_distributions_with(
        seg: LatencyDistribution,
        spec: LatencyDistribution,
        target: LatencyDistribution,
        p: f64,
        allow_slow_speculator: bool,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param("p", format!("must be in [0, 1], got {p}")));
        }
        let profile = SystemProfile { seg, spec, target, p };
        if profile.alpha() >= 1.0 && !allow_slow_speculator {
            return Err(Error::SlowSpeculator { alpha: profile.alpha() });
        }
        Ok(profile)
    }

    pub fn seg(&self) -> &LatencyDistribution {
        &self.seg
    }

    pub fn spec(&self) -> &LatencyDistribution {
        &self.spec
    }

    pub fn target(&self) -> &LatencyDistribution {
        &self.target
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn alpha(&self) -> f64 {
        self.spec.mean() / self.target.mean()
    }

    pub fn beta(&self) -> f64 {
        self.seg.mean() / self.target.mean()
    }

    /// Largest coefficient of variation among the three stages.
    pub fn nu(&self) -> f64 {
        self.seg.cv().max(self.spec.cv()).max(self.target.cv())
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::from_distributions_with(self.seg, self.spec, self.target, p, true)
    }

    pub fn params(&self) -> ProfileParams {
        ProfileParams {
            p: self.p,
            alpha: self.alpha(),
            beta: self.beta(),
            nu: self.nu(),
            target_mean_s: self.target.mean(),
            kind: self.target.kind(),
            allow_slow_speculator: self.alpha() >= 1.0,
        }
    }
}

/// Serializable `(p, alpha, beta, nu)` parameterization, the on-disk profile format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "default_target_mean")]
    pub target_mean_s: f64,
    #[serde(default)]
    pub kind: DistributionKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_slow_speculator: bool,
}

fn default_target_mean() -> f64 {
    1.0
}

impl ProfileParams {
    pub fn new(p: f64, alpha: f64, beta: f64, nu: f64, target_mean_s: f64) -> Self {
        ProfileParams {
            p,
            alpha,
            beta,
            nu,
            target_mean_s,
            kind: DistributionKind::Lognormal,
            allow_slow_speculator: false,
        }
    }

    pub fn build(&self) -> Result<SystemProfile> {
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
        if !(self.target_mean_s > 0.0 && self.target_mean_s.is_finite()) {
            return Err(Error::param("target_mean_s", "must be positive"));
        }
        if self.alpha >= 1.0 && !self.allow_slow_speculator {
            return Err(Error::SlowSpeculator { alpha: self.alpha });
        }
        let kind = if self.nu == 0.0 {
            DistributionKind::Constant
        } else if self.kind == DistributionKind::Constant {
            return Err(Error::param("kind", "constant kind requires nu = 0"));
        } else {
            self.kind
        };
        let m = self.target_mean_s;
        SystemProfile::from_distributions_with(
            LatencyDistribution::new(kind, self.beta * m, self.nu)?,
            LatencyDistribution::new(kind, self.alpha * m, self.nu)?,
            LatencyDistribution::new(kind, m, self.nu)?,
            self.p,
            self.allow_slow_speculator,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile params serialize")
    }
}

/// Profile with lognormal stages sharing `cv = nu` (constant when `nu = 0`).
pub fn make_profile(p: f64, alpha: f64, beta: f64, nu: f64, target_mean: f64) -> Result<SystemProfile> {
    ProfileParams::new(p, alpha, beta, nu, target_mean).build()
}

/// Empirical `(p_hat, alpha_hat, beta_hat)` of a set of recorded hops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEstimate {
    pub p_hat: f64,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub n_hops: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Estimates the profile ratios from recorded hops.
///
/// `p_hat` is the fraction of hops whose speculation is accepted; the
/// latency ratios are ratios of pooled means.
pub fn profile_from_trace(instances: &[crate::engine::Instance]) -> Result<ProfileEstimate> {
    let hops: Vec<_> = instances.iter().flat_map(|i| i.hops().iter().map(move |h| (i, h))).collect();
    if hops.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = hops.len() as f64;
    let (mut seg, mut spec, mut target, mut accepted) = (0.0, 0.0, 0.0, 0usize);
    for (instance, hop) in &hops {
        seg += hop.t_seg;
        spec += hop.t_spec;
        target += hop.t_target;
        if instance.accepted(hop.hop_index) {
            accepted += 1;
        }
    }
    let alpha_hat = spec / target;
    let beta_hat = seg / target;
    let mut warnings = Vec::new();
    if alpha_hat >= 1.0 {
        let msg = format!("alpha_hat = {alpha_hat:.4} >= 1: speculator is not faster than the target tool");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(ProfileEstimate {
        p_hat: accepted as f64 / n,
        alpha_hat,
        beta_hat,
        n_hops: hops.len(),
        warnings,
    })
}
