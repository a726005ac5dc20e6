//! Wall-clock execution of the window scheduler.
//!
//! Each stage call runs on its own OS thread that sleeps for the sampled
//! duration scaled by `time_scale`, then reports back over a channel. The
//! coordinator drives the same [`WindowScheduler`] as the simulator, so the
//! measured wall time can be checked against the simulated one. Cancelled
//! calls keep sleeping but their completions are ignored.

use std::collections::HashSet;
use std::sync::mpsc::{self, Receiver, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::window::{Discipline, Executor, TaskId, WindowScheduler};
use super::{run, BoundedMode, EventLog, Instance, Policy, ResamplePolicy, RunResult, UNBOUNDED_CAP};
use crate::analytics::Window;
use crate::error::{Error, Result};
use crate::profile::{Substream, SystemProfile};

/// Per-event allowance for thread wake-up jitter, in real seconds.
const JITTER_PER_EVENT_S: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Real seconds per unit of virtual time.
    pub time_scale: f64,
    /// Maximum number of concurrently running stage calls.
    pub worker_cap: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            time_scale: 0.01,
            worker_cap: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveReport {
    pub result: RunResult,
    /// Wall time from the discrete-event simulator on the same instance.
    pub expected_wall: f64,
    /// Measured wall time converted back to virtual units.
    pub measured_wall: f64,
    /// Measured wall time in real seconds.
    pub measured_real_s: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
    #[serde(skip)]
    pub log: EventLog,
}

struct LiveExecutor {
    origin: Instant,
    scale: f64,
    cap: usize,
    next: TaskId,
    active: HashSet<TaskId>,
    tx: Sender<TaskId>,
}

impl Executor for LiveExecutor {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() / self.scale
    }

    fn launch(&mut self, duration: f64) -> Result<TaskId> {
        if self.active.len() >= self.cap {
            return Err(Error::WorkerCapExceeded { cap: self.cap });
        }
        let id = self.next;
        self.next += 1;
        self.active.insert(id);
        let tx = self.tx.clone();
        let deadline = Instant::now() + Duration::from_secs_f64(duration * self.scale);
        std::thread::spawn(move || {
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
            // The coordinator may already be gone.
            let _ = tx.send(id);
        });
        Ok(id)
    }

    fn cancel(&mut self, task: TaskId) {
        self.active.remove(&task);
    }
}

fn discipline(policy: &Policy) -> Result<(Discipline, usize)> {
    match *policy {
        Policy::Sequential => Ok((Discipline::Continuous, 1)),
        Policy::Bounded {
            k,
            mode: BoundedMode::EventDriven,
        } => Ok((Discipline::Bounded, k)),
        Policy::Continuous {
            window: Window::Threads(k),
        } => Ok((Discipline::Continuous, k)),
        Policy::Continuous {
            window: Window::Unbounded,
        } => Ok((Discipline::ContinuousUnbounded, UNBOUNDED_CAP)),
        _ => Err(Error::param(
            "policy",
            format!("{} has no live executor; use sequential, bounded-event or continuous", policy.name()),
        )),
    }
}

/// Runs `instance` under `policy` in real time.
pub fn live_run_instance(instance: &Instance, policy: &Policy, config: &LiveConfig) -> Result<LiveReport> {
    if !(config.time_scale > 0.0 && config.time_scale.is_finite()) {
        return Err(Error::param("time_scale", "must be positive and finite"));
    }
    if config.worker_cap < 2 {
        return Err(Error::param("worker_cap", "must be at least 2"));
    }
    let (disc, cap) = discipline(policy)?;
    if cap == 0 {
        return Err(Error::param("k", "window size must be at least 1"));
    }
    let (expected, _) = run(instance, policy)?;

    let (tx, rx): (Sender<TaskId>, Receiver<TaskId>) = mpsc::channel();
    let mut ex = LiveExecutor {
        origin: Instant::now(),
        scale: config.time_scale,
        cap: config.worker_cap,
        next: 0,
        active: HashSet::new(),
        tx,
    };
    let mut sched = WindowScheduler::new(instance, *policy, disc, cap);
    sched.start(&mut ex)?;
    while !sched.is_finished() {
        let task = rx
            .recv()
            .map_err(|_| Error::InvalidInstance("live run stalled before the final commit".into()))?;
        if !ex.active.remove(&task) {
            continue;
        }
        sched.on_complete(&mut ex, task)?;
    }
    let measured_wall = ex.now();
    let (mut result, log) = sched.into_parts();
    result.policy = policy.name().to_string();
    result.k = policy.window().to_string();
    result.wall_clock = measured_wall;

    // In virtual units; multiply by time_scale for real seconds.
    let tolerance = (0.1 * expected.wall_clock).max(log.len() as f64 * JITTER_PER_EVENT_S / config.time_scale);
    let within_tolerance = (measured_wall - expected.wall_clock).abs() <= tolerance;
    log::debug!(
        "live {}: measured {measured_wall:.3}, simulated {:.3}",
        policy,
        expected.wall_clock
    );
    Ok(LiveReport {
        result,
        expected_wall: expected.wall_clock,
        measured_wall,
        measured_real_s: measured_wall * config.time_scale,
        tolerance,
        within_tolerance,
        log,
    })
}

/// Samples an instance from `profile` and runs it in real time.
pub fn live_run(
    profile: &SystemProfile,
    n_hops: usize,
    policy: &Policy,
    seed: u64,
    config: &LiveConfig,
) -> Result<LiveReport> {
    let instance = Instance::sample(profile, n_hops, Substream::root(seed), ResamplePolicy::FixedPerHop)?;
    live_run_instance(&instance, policy, config)
}
