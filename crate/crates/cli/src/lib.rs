//! Command-line front end for `spechop`.
//!
//! [`run`] is the whole program minus process setup, so integration tests can
//! drive it in-process. Exit codes: 0 success, 1 failed `--assert`, 2 usage
//! error, 3 I/O or parse error.

mod commands;
mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spechop::analytics::Window;
use spechop::profile::DistributionKind;

pub use output::Format;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spechop", version, about = "Speculative tool-call scheduling: analytics, simulation, replay")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Random seed.
    #[arg(long, global = true, env = "SPECHOP_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Suppress the fingerprint banner and wall-clock measurements.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Worker threads for Monte Carlo trials (0 = all cores). Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    /// JSON profile file; explicit flags override its values.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Speculation success probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// E[spec] / E[target].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// E[segment] / E[target].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Coefficient of variation of every stage (0 = constant latencies).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Mean target-tool latency in seconds.
    #[arg(long)]
    pub target_mean: Option<f64>,
    #[arg(long)]
    pub dist: Option<DistributionKind>,
    #[arg(long)]
    pub allow_slow_speculator: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyName {
    Sequential,
    FullSpeculation,
    BoundedAnalytic,
    BoundedEvent,
    Continuous,
}

impl PolicyName {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Sequential => "sequential",
            PolicyName::FullSpeculation => "full-speculation",
            PolicyName::BoundedAnalytic => "bounded-analytic",
            PolicyName::BoundedEvent => "bounded-event",
            PolicyName::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form latency, window and starvation figures.
    Analyze {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        /// Window size, or `inf`.
        #[arg(long, default_value = "inf")]
        k: Window,
        #[arg(long, default_value_t = 100)]
        n_hops: u64,
        #[arg(long, default_value_t = 0.4)]
        nu: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
    },
    /// Deterministic and risk-adjusted window capacity.
    Capacity {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.4)]
        nu: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
    },
    /// Monte Carlo relative latency compared against theory.
    Simulate {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, default_value_t = 200)]
        n_hops: usize,
        #[arg(long, value_enum, default_value_t = PolicyName::Continuous)]
        policy: PolicyName,
        #[arg(long, default_value = "inf")]
        k: Window,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Reuse each hop's first draw on regeneration instead of redrawing.
        #[arg(long)]
        fixed_per_hop: bool,
        /// Exit with status 1 when the theory comparison fails.
        #[arg(long = "assert")]
        assert_theory: bool,
        /// Allowed |observed - predicted| relative latency (default: finite-N term + 3 CI).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Replay a JSON Lines trace under a policy.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyName::Continuous)]
        policy: PolicyName,
        #[arg(long, default_value = "inf")]
        k: Window,
        /// Verifier configuration (JSON) for observation-mode traces.
        #[arg(long)]
        verifier_config: Option<PathBuf>,
    },
    /// Monte Carlo sweep over one parameter.
    Sweep {
        #[arg(long)]
        axis: spechop::experiments::SweepAxis,
        /// Comma-separated grid, e.g. `1,2,3,inf` for k.
        #[arg(long)]
        grid: String,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, value_enum, default_value_t = PolicyName::Continuous)]
        policy: PolicyName,
        #[arg(long, default_value = "inf")]
        k: Window,
        #[arg(long, default_value_t = 50)]
        n_hops: usize,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        /// `fraction:p` anchors for the cache_fraction axis, e.g. `0.05:0.3,0.25:0.6`.
        #[arg(long)]
        cache_anchors: Option<String>,
    },
    /// Run the observation verifier on one pair or a JSON Lines batch.
    Verify {
        #[arg(long, requires = "spec", conflicts_with = "batch")]
        target: Option<String>,
        #[arg(long, requires = "target")]
        spec: Option<String>,
        /// JSON Lines file of {"target_obs", "spec_obs"} objects.
        #[arg(long)]
        batch: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a sampled instance with real concurrent workers.
    Live {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, default_value_t = 4)]
        n_hops: usize,
        #[arg(long, value_enum, default_value_t = PolicyName::Continuous)]
        policy: PolicyName,
        #[arg(long, default_value = "inf")]
        k: Window,
        /// Real seconds per simulated second.
        #[arg(long, default_value_t = 0.01)]
        time_scale: f64,
        #[arg(long, default_value_t = 64)]
        worker_cap: usize,
        /// Exit with status 1 when the measured wall time is out of tolerance.
        #[arg(long = "assert")]
        assert_tolerance: bool,
    },
    /// Write a synthetic trace sampled from a profile.
    GenTrace {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, default_value_t = 10)]
        n_hops: usize,
        #[arg(long, default_value_t = 1)]
        queries: usize,
    },
}

/// Raised by `--assert` when a comparison fails; maps to exit status 1.
#[derive(Debug)]
pub struct AssertionFailed(pub String);

impl std::fmt::Display for AssertionFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "assertion failed: {}", self.0)
    }
}

impl std::error::Error for AssertionFailed {}

/// Invalid flag combination detected after parsing; maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<AssertionFailed>().is_some() {
        return EXIT_ASSERT;
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if let Some(e) = err.downcast_ref::<spechop::Error>() {
        use spechop::Error as E;
        return match e {
            E::InvalidParameter { .. }
            | E::SlowSpeculator { .. }
            | E::ConfigMismatch(_)
            | E::WindowCapExceeded { .. }
            | E::WorkerCapExceeded { .. } => EXIT_USAGE,
            _ => EXIT_IO,
        };
    }
    EXIT_IO
}

fn describe(err: &anyhow::Error) -> String {
    if let Some(spechop::Error::InvalidParameter { name, reason }) = err.downcast_ref::<spechop::Error>() {
        return format!("invalid value for --{}: {reason}", name.replace('_', "-"));
    }
    format!("{err:#}")
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match commands::execute(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            let _ = writeln!(stderr, "error: {}", describe(&err));
            exit_code(&err)
        }
    }
}
