//! Speculative window scheduler shared by the simulator and the live executor.
//!
//! A *thread* is one hop whose target call has been launched. The window
//! holds threads in hop order; its front is the earliest unverified hop.
//! The *frontier* is the single model instance extending the trajectory:
//! it generates the segment of the hop after the window's back, which is only
//! possible once the back thread's speculative observation is available.
//!
//! When a thread's segment completes, its target call and (for every hop but
//! the last) its speculator call start together. The front thread resolves
//! once its target observation and speculative observation are both in: an
//! accepted speculation commits and the window shifts; a rejected one commits
//! the target observation and discards every downstream thread, cancelling
//! their in-flight calls.
//!
//! `Continuous` extends whenever fewer than `k` threads are active. A
//! frontier that has finished its speculation but sits at capacity is
//! *starved* until a slot frees. `Bounded` builds rounds of at most `k`
//! threads and starts the next round only when the window has drained.

use std::collections::{HashMap, VecDeque};

use super::kernel::{EventKey, EventQueue};
use super::{Attempt, EventKind, EventLog, Instance, Policy, RunResult};
use crate::error::{Error, Result};

pub(crate) type TaskId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Discipline {
    Continuous,
    ContinuousUnbounded,
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Seg,
    Spec,
    Target,
}

/// Runs stage tasks for a [`WindowScheduler`], in virtual or real time.
pub(crate) trait Executor {
    fn now(&self) -> f64;
    fn launch(&mut self, duration: f64) -> Result<TaskId>;
    fn cancel(&mut self, task: TaskId);
}

#[derive(Debug)]
struct Thread {
    id: u64,
    hop: usize,
    draws: Attempt,
    target: TaskId,
    target_done: bool,
    spec: Option<TaskId>,
    spec_done: bool,
}

impl Thread {
    fn ready(&self) -> bool {
        self.target_done && (self.spec.is_none() || self.spec_done)
    }
}

#[derive(Debug)]
struct PendingSeg {
    id: u64,
    hop: usize,
    draws: Attempt,
    task: TaskId,
    speculate: bool,
}

pub(crate) struct WindowScheduler<'a> {
    instance: &'a Instance,
    discipline: Discipline,
    cap: usize,
    n: usize,
    window: VecDeque<Thread>,
    pending: Option<PendingSeg>,
    tasks: HashMap<TaskId, (Stage, u64)>,
    attempts: Vec<u32>,
    round_created: usize,
    idle_since: Option<f64>,
    next_thread: u64,
    log: EventLog,
    result: RunResult,
    finished: bool,
}

impl<'a> WindowScheduler<'a> {
    pub(crate) fn new(instance: &'a Instance, policy: Policy, discipline: Discipline, cap: usize) -> Self {
        let n = instance.n_hops();
        WindowScheduler {
            instance,
            discipline,
            cap,
            n,
            window: VecDeque::new(),
            pending: None,
            tasks: HashMap::new(),
            attempts: vec![0; n],
            round_created: 0,
            idle_since: None,
            next_thread: 0,
            log: EventLog::default(),
            result: RunResult::empty(&policy, instance.is_observation_mode()),
            finished: false,
        }
    }

    pub(crate) fn is_finished(&self) -> bool {
        self.finished
    }

    pub(crate) fn into_parts(self) -> (RunResult, EventLog) {
        (self.result, self.log)
    }

    pub(crate) fn start<E: Executor>(&mut self, ex: &mut E) -> Result<()> {
        self.try_extend(ex)
    }

    /// Handles a completed task. Completions of cancelled tasks are ignored.
    pub(crate) fn on_complete<E: Executor>(&mut self, ex: &mut E, task: TaskId) -> Result<()> {
        let Some((stage, thread)) = self.tasks.remove(&task) else {
            return Ok(());
        };
        let now = ex.now();
        match stage {
            Stage::Seg => {
                let seg = self.pending.take().expect("segment completion without a pending segment");
                debug_assert_eq!(seg.id, thread);
                self.log.push(now, EventKind::SegDone, seg.id, seg.hop);
                self.spawn(ex, seg)?;
            }
            Stage::Spec => {
                let t = self.thread_mut(thread);
                t.spec_done = true;
                let hop = t.hop;
                self.log.push(now, EventKind::SpecDone, thread, hop);
                self.resolve(ex)?;
            }
            Stage::Target => {
                let t = self.thread_mut(thread);
                t.target_done = true;
                let hop = t.hop;
                self.log.push(now, EventKind::TargetDone, thread, hop);
                self.resolve(ex)?;
            }
        }
        self.try_extend(ex)
    }

    fn thread_mut(&mut self, id: u64) -> &mut Thread {
        self.window
            .iter_mut()
            .find(|t| t.id == id)
            .expect("completion for a thread outside the window")
    }

    fn spawn<E: Executor>(&mut self, ex: &mut E, seg: PendingSeg) -> Result<()> {
        let now = ex.now();
        self.log.push(now, EventKind::ThreadSpawn, seg.id, seg.hop);
        let target = ex.launch(seg.draws.target)?;
        self.tasks.insert(target, (Stage::Target, seg.id));
        self.result.calls_target += 1;
        self.log.push(now, EventKind::TargetLaunch, seg.id, seg.hop);
        let spec = if seg.speculate {
            let task = ex.launch(seg.draws.spec)?;
            self.tasks.insert(task, (Stage::Spec, seg.id));
            self.result.calls_spec += 1;
            self.log.push(now, EventKind::SpecStart, seg.id, seg.hop);
            Some(task)
        } else {
            None
        };
        self.window.push_back(Thread {
            id: seg.id,
            hop: seg.hop,
            draws: seg.draws,
            target,
            target_done: false,
            spec,
            spec_done: false,
        });
        Ok(())
    }

    fn resolve<E: Executor>(&mut self, ex: &mut E) -> Result<()> {
        let now = ex.now();
        while self.window.front().is_some_and(Thread::ready) {
            let front = self.window.pop_front().expect("front checked");
            if front.spec.is_none() {
                let obs = self.instance.committed_observation(front.hop, false);
                self.commit(now, front.id, front.hop, obs);
                continue;
            }
            if front.draws.accepted {
                self.log.push(now, EventKind::VerifyAccept, front.id, front.hop);
                let obs = self.instance.committed_observation(front.hop, true);
                self.commit(now, front.id, front.hop, obs);
            } else {
                self.log.push(now, EventKind::VerifyReject, front.id, front.hop);
                self.result.rollbacks += 1;
                let obs = self.instance.committed_observation(front.hop, false);
                self.commit(now, front.id, front.hop, obs);
                self.discard_downstream(ex, now);
            }
        }
        if self.result.commits as usize == self.n && !self.finished {
            self.finished = true;
            self.result.wall_clock = now;
            self.log.push(now, EventKind::FinalAnswer, self.next_thread, self.n - 1);
        }
        Ok(())
    }

    fn commit(&mut self, now: f64, thread: u64, hop: usize, obs: Option<String>) {
        self.log.push(now, EventKind::Commit, thread, hop);
        self.result.commit(hop, obs);
    }

    fn discard_downstream<E: Executor>(&mut self, ex: &mut E, now: f64) {
        for t in std::mem::take(&mut self.window) {
            if !t.target_done {
                ex.cancel(t.target);
                self.tasks.remove(&t.target);
            }
            if let Some(spec) = t.spec.filter(|_| !t.spec_done) {
                ex.cancel(spec);
                self.tasks.remove(&spec);
            }
            self.log.push(
                now,
                EventKind::ThreadDiscard {
                    target_cancelled: !t.target_done,
                },
                t.id,
                t.hop,
            );
        }
        if let Some(seg) = self.pending.take() {
            ex.cancel(seg.task);
            self.tasks.remove(&seg.task);
            self.log.push(now, EventKind::ThreadDiscard { target_cancelled: false }, seg.id, seg.hop);
        }
    }

    /// Starts the next frontier segment if the window allows it.
    fn try_extend<E: Executor>(&mut self, ex: &mut E) -> Result<()> {
        if self.finished || self.pending.is_some() {
            return Ok(());
        }
        let next = match self.window.back() {
            Some(back) => {
                if back.spec.is_none() || !back.spec_done {
                    return Ok(());
                }
                back.hop + 1
            }
            None => self.result.commits as usize,
        };
        if next >= self.n {
            return Ok(());
        }
        let now = ex.now();
        match self.discipline {
            Discipline::Bounded => {
                if self.window.is_empty() {
                    self.round_created = 0;
                } else if self.round_created >= self.cap {
                    return Ok(());
                }
            }
            Discipline::Continuous | Discipline::ContinuousUnbounded => {
                if self.window.len() >= self.cap {
                    if self.discipline == Discipline::ContinuousUnbounded {
                        return Err(Error::WindowCapExceeded { cap: self.cap, hop: next });
                    }
                    self.idle_since.get_or_insert(now);
                    return Ok(());
                }
                if let Some(since) = self.idle_since.take() {
                    let idle = now - since;
                    if idle > 0.0 {
                        self.result.starved_rounds += 1;
                        self.result.frontier_idle += idle;
                    }
                }
            }
        }

        let attempt = self.attempts[next];
        self.attempts[next] += 1;
        let draws = self.instance.attempt(next, attempt);
        let id = self.next_thread;
        self.next_thread += 1;
        self.round_created += 1;
        let speculate = self.cap >= 2 && next + 1 < self.n;
        let task = ex.launch(draws.seg)?;
        self.tasks.insert(task, (Stage::Seg, id));
        self.result.calls_model += 1;
        self.log.push(now, EventKind::SegStart, id, next);
        self.pending = Some(PendingSeg {
            id,
            hop: next,
            draws,
            task,
            speculate,
        });
        Ok(())
    }
}

/// Discrete-event executor: tasks complete at `launch time + duration` in virtual time.
/// Ties fire in launch order.
#[derive(Default)]
struct SimExecutor {
    queue: EventQueue<TaskId>,
    keys: HashMap<TaskId, EventKey>,
    next_task: TaskId,
    now: f64,
}

impl Executor for SimExecutor {
    fn now(&self) -> f64 {
        self.now
    }

    fn launch(&mut self, duration: f64) -> Result<TaskId> {
        let id = self.next_task;
        self.next_task += 1;
        let key = self.queue.schedule(self.now + duration, id);
        self.keys.insert(id, key);
        Ok(id)
    }

    fn cancel(&mut self, task: TaskId) {
        if let Some(key) = self.keys.remove(&task) {
            self.queue.cancel(key);
        }
    }
}

pub(crate) fn simulate(
    instance: &Instance,
    policy: Policy,
    discipline: Discipline,
    cap: usize,
) -> Result<(RunResult, EventLog)> {
    let mut sched = WindowScheduler::new(instance, policy, discipline, cap);
    let mut ex = SimExecutor::default();
    sched.start(&mut ex)?;
    while !sched.is_finished() {
        let Some((time, task)) = ex.queue.pop() else {
            return Err(Error::InvalidInstance("simulation stalled before the final commit".into()));
        };
        ex.keys.remove(&task);
        ex.now = time;
        sched.on_complete(&mut ex, task)?;
    }
    Ok(sched.into_parts())
}
