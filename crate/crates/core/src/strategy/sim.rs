//! Event handlers that run a workload under one allocation strategy.
//!
//! Timer events (`JobSubmit`, `PhaseEnd`, `QTaskEnqueue`, `QTaskEnd`,
//! `WalltimeKill`) drive state changes. All other events are records: the
//! decision they describe is applied to the ledger when it is scheduled, at
//! the current instant, so trace order matches decision order.
//!
//! Scheduling decisions (expansions, queue grants, QPU dispatch) are made in
//! [`Handler::settle`], after every event of the instant has been handled.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use thiserror::Error;

use crate::engine::{self, EventHandle, EventQueue, Handler, HandlerFault, Trace};
use crate::model::{
    effective_task_duration, validate_workload, ClusterConfig, EventKind, EventPayload, JobId, JobSpec, ModelError,
    Phase, QpuTechnologyProfile, ResourceId, Seconds, SimEvent, ValidationError,
};

use super::queue::{plan, RunningAlloc, StrategyDecision};
use super::state::{ClusterState, WaitEntry};
use super::{AllocationStrategy, Boundary, Strategy};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    InvalidCluster(#[from] ModelError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Fault(#[from] Box<HandlerFault>),
}

/// Runs `jobs` on `cluster` under `strategy`. Identical inputs give identical
/// traces.
pub fn simulate(cluster: &ClusterConfig, jobs: &[JobSpec], strategy: &Strategy, seed: u64) -> Result<Trace, SimError> {
    strategy.validate().map_err(SimError::InvalidStrategy)?;
    let cluster = strategy.cluster_for(cluster);
    simulate_with(&cluster, jobs, strategy.policy().as_ref(), seed)
}

pub fn simulate_with(
    cluster: &ClusterConfig,
    jobs: &[JobSpec],
    strategy: &dyn AllocationStrategy,
    seed: u64,
) -> Result<Trace, SimError> {
    cluster.validate()?;
    validate_workload(jobs, cluster, strategy.qpu_access())?;
    let mut queue = EventQueue::new();
    for job in jobs {
        queue
            .schedule(job.submit_time, EventKind::JobSubmit, EventPayload::job(job.job_id))
            .expect("validated submit times are finite and non-negative");
    }
    let mut sim = Simulator::new(cluster, jobs, strategy, seed);
    Ok(engine::run(queue, &mut sim)?)
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream of one quantum task, independent of execution order.
pub(crate) fn task_rng(seed: u64, job: JobId, phase: usize, task: u32) -> ChaCha8Rng {
    let key = mix(mix(mix(seed) ^ job.0) ^ phase as u64) ^ u64::from(task);
    ChaCha8Rng::seed_from_u64(mix(key))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Pending,
    Waiting,
    Active,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TaskState {
    Idle,
    Queued(usize),
    Running(usize),
}

/// A classical phase running on a fixed node count since `start`.
#[derive(Clone, Copy, Debug)]
struct Segment {
    start: Seconds,
    remaining: f64,
    nodes: u32,
}

struct JobRun {
    spec: JobSpec,
    status: Status,
    /// Phase the current allocation started at.
    alloc_start: usize,
    phase: usize,
    units: Vec<ResourceId>,
    deadline: Seconds,
    kill: Option<EventHandle>,
    timer: Option<EventHandle>,
    task: u32,
    task_state: TaskState,
    segment: Option<Segment>,
    resume: Option<u64>,
    expand: Option<u64>,
}

struct Simulator<'a> {
    strategy: &'a dyn AllocationStrategy,
    profiles: Vec<QpuTechnologyProfile>,
    seed: u64,
    state: ClusterState,
    jobs: Vec<JobRun>,
    index: BTreeMap<JobId, usize>,
    /// Tasks waiting per physical QPU: (enqueue time, job, job index).
    qpu_queues: Vec<Vec<(Seconds, JobId, usize)>>,
    order: u64,
}

type SimResult = Result<(), String>;

impl<'a> Simulator<'a> {
    fn new(cluster: &ClusterConfig, jobs: &[JobSpec], strategy: &'a dyn AllocationStrategy, seed: u64) -> Self {
        let runs: Vec<JobRun> = jobs
            .iter()
            .map(|spec| JobRun {
                spec: spec.clone(),
                status: Status::Pending,
                alloc_start: 0,
                phase: 0,
                units: Vec::new(),
                deadline: f64::INFINITY,
                kill: None,
                timer: None,
                task: 0,
                task_state: TaskState::Idle,
                segment: None,
                resume: None,
                expand: None,
            })
            .collect();
        Self {
            strategy,
            profiles: cluster.qpu_profiles().into_iter().cloned().collect(),
            seed,
            state: ClusterState::new(cluster, strategy.qpu_access()),
            index: jobs.iter().enumerate().map(|(i, j)| (j.job_id, i)).collect(),
            jobs: runs,
            qpu_queues: vec![Vec::new(); cluster.physical_qpus() as usize],
            order: 0,
        }
    }

    fn next_order(&mut self) -> u64 {
        self.order += 1;
        self.order
    }

    fn job_index(&self, event: &SimEvent) -> Result<usize, String> {
        let id = event.job_id.ok_or_else(|| format!("{} without job id", event.kind))?;
        self.index.get(&id).copied().ok_or_else(|| format!("unknown job {id}"))
    }

    fn id(&self, j: usize) -> JobId {
        self.jobs[j].spec.job_id
    }

    fn record(&self, q: &mut EventQueue, kind: EventKind, j: usize, resources: Vec<ResourceId>) {
        let job = &self.jobs[j];
        q.schedule_now(kind, EventPayload::phase(job.spec.job_id, job.phase).with_resources(resources));
    }

    fn timer(
        &mut self,
        q: &mut EventQueue,
        j: usize,
        at: Seconds,
        kind: EventKind,
        resources: Vec<ResourceId>,
    ) -> SimResult {
        let job = &self.jobs[j];
        let payload = EventPayload::phase(job.spec.job_id, job.phase).with_resources(resources);
        let handle = q.schedule(at, kind, payload).map_err(|e| e.to_string())?;
        self.jobs[j].timer = Some(handle);
        Ok(())
    }

    /// A completion at or before the deadline supersedes the walltime kill.
    fn disarm_kill_if_done_by(&mut self, q: &mut EventQueue, j: usize, completion: Seconds) {
        let job = &mut self.jobs[j];
        if completion <= job.deadline {
            if let Some(kill) = job.kill.take() {
                q.cancel(kill);
            }
        }
    }

    fn is_last_phase(&self, j: usize) -> bool {
        let job = &self.jobs[j];
        self.strategy.last_phase_of_allocation(&job.spec, job.alloc_start, job.phase)
    }

    fn start_phase(&mut self, q: &mut EventQueue, j: usize) -> SimResult {
        self.record(q, EventKind::PhaseStart, j, Vec::new());
        let now = q.now();
        let job = &self.jobs[j];
        match job.spec.phases[job.phase] {
            Phase::Classical { work } => {
                let nodes = self.state.nodes_of(job.spec.job_id);
                if nodes == 0 {
                    return Err(format!("job {} starts a classical phase without nodes", job.spec.job_id));
                }
                let end = now + work / f64::from(nodes);
                self.jobs[j].segment = Some(Segment { start: now, remaining: work, nodes });
                self.timer(q, j, end, EventKind::PhaseEnd, Vec::new())?;
                if self.is_last_phase(j) {
                    self.disarm_kill_if_done_by(q, j, end);
                }
            }
            Phase::Quantum { prep_time_per_task, .. } => {
                let unit = *job
                    .units
                    .first()
                    .ok_or_else(|| format!("job {} starts a quantum phase without a QPU", job.spec.job_id))?;
                self.jobs[j].task = 0;
                self.timer(q, j, now + prep_time_per_task, EventKind::QTaskEnqueue, vec![unit])?;
            }
        }
        Ok(())
    }

    /// Gives everything back and records the release.
    fn release_all(&mut self, q: &mut EventQueue, j: usize) {
        let id = self.id(j);
        let mut resources: Vec<ResourceId> =
            self.state.release_all_nodes(id).into_iter().map(ResourceId::Node).collect();
        let units = std::mem::take(&mut self.jobs[j].units);
        self.state.release_units(id, &units);
        resources.extend(units);
        if !resources.is_empty() {
            self.record(q, EventKind::AllocRelease, j, resources);
        }
        if let Some(kill) = self.jobs[j].kill.take() {
            q.cancel(kill);
        }
    }

    fn finish(&mut self, q: &mut EventQueue, j: usize) {
        self.release_all(q, j);
        self.record(q, EventKind::JobEnd, j, Vec::new());
        let job = &mut self.jobs[j];
        job.status = Status::Done;
        job.resume = None;
        job.expand = None;
        job.segment = None;
    }

    fn on_submit(&mut self, q: &EventQueue, j: usize) -> SimResult {
        let job = &mut self.jobs[j];
        if job.status != Status::Pending {
            return Err(format!("job {} submitted twice", job.spec.job_id));
        }
        job.status = Status::Waiting;
        let demand = self.strategy.demand(&job.spec, 0);
        self.state.wait_queue.push(WaitEntry { job: job.spec.job_id, phase: 0, ready: q.now(), demand });
        Ok(())
    }

    fn on_phase_end(&mut self, q: &mut EventQueue, j: usize) -> SimResult {
        let finished = self.jobs[j].phase;
        self.jobs[j].segment = None;
        if finished + 1 == self.jobs[j].spec.phases.len() {
            self.finish(q, j);
            return Ok(());
        }
        let held = self.state.nodes_of(self.id(j));
        match self.strategy.boundary(&self.jobs[j].spec, finished, held) {
            Boundary::ReleaseAll => {
                self.release_all(q, j);
                let job = &mut self.jobs[j];
                job.phase = finished + 1;
                job.status = Status::Waiting;
                let demand = self.strategy.demand(&job.spec, job.phase);
                self.state.wait_queue.push(WaitEntry {
                    job: job.spec.job_id,
                    phase: job.phase,
                    ready: q.now(),
                    demand,
                });
            }
            boundary => {
                if let Boundary::Shrink { keep } = boundary {
                    if held > keep {
                        let released = self.state.release_nodes(self.id(j), held - keep);
                        self.record(q, EventKind::Shrink, j, released.into_iter().map(ResourceId::Node).collect());
                    }
                }
                self.jobs[j].phase = finished + 1;
                self.jobs[j].resume = Some(self.next_order());
                let wants_more = self
                    .strategy
                    .expansion_target(&self.jobs[j].spec, finished + 1)
                    .is_some_and(|target| target > self.state.nodes_of(self.id(j)));
                if wants_more && self.jobs[j].expand.is_none() {
                    self.jobs[j].expand = Some(self.next_order());
                }
            }
        }
        Ok(())
    }

    fn on_enqueue(&mut self, q: &EventQueue, j: usize) -> SimResult {
        let job = &mut self.jobs[j];
        let unit = *job.units.first().ok_or("task enqueued without a QPU unit")?;
        let qpu = unit.physical_qpu().unwrap() as usize;
        job.task_state = TaskState::Queued(qpu);
        self.qpu_queues[qpu].push((q.now(), job.spec.job_id, j));
        Ok(())
    }

    fn on_task_end(&mut self, q: &mut EventQueue, j: usize) -> SimResult {
        let TaskState::Running(qpu) = self.jobs[j].task_state else {
            return Err(format!("task end for job {} with no running task", self.id(j)));
        };
        self.state.end_task(qpu, self.id(j));
        let job = &mut self.jobs[j];
        job.task_state = TaskState::Idle;
        job.task += 1;
        let Phase::Quantum { tasks, prep_time_per_task } = job.spec.phases[job.phase] else {
            return Err("task end outside a quantum phase".into());
        };
        if job.task < tasks {
            let unit = job.units[0];
            self.timer(q, j, q.now() + prep_time_per_task, EventKind::QTaskEnqueue, vec![unit])
        } else {
            let now = q.now();
            self.timer(q, j, now, EventKind::PhaseEnd, Vec::new())
        }
    }

    fn on_kill(&mut self, q: &mut EventQueue, j: usize) -> SimResult {
        if let Some(timer) = self.jobs[j].timer.take() {
            q.cancel(timer);
        }
        match self.jobs[j].task_state {
            TaskState::Running(qpu) => {
                self.state.end_task(qpu, self.id(j));
                self.record(q, EventKind::QTaskEnd, j, vec![ResourceId::Qpu(qpu as u32)]);
            }
            TaskState::Queued(qpu) => self.qpu_queues[qpu].retain(|&(_, _, idx)| idx != j),
            TaskState::Idle => {}
        }
        self.jobs[j].task_state = TaskState::Idle;
        self.finish(q, j);
        Ok(())
    }

    fn grant(&mut self, q: &mut EventQueue, job: JobId, phase: usize, nodes: u32, units: u32) -> SimResult {
        let j = self.index[&job];
        self.state.wait_queue.retain(|e| !(e.job == job && e.phase == phase));
        let mut resources: Vec<ResourceId> =
            self.state.take_nodes(job, nodes).into_iter().map(ResourceId::Node).collect();
        let taken = self.state.take_units(job, units);
        resources.extend(taken.iter().copied());
        let walltime = self.strategy.demand(&self.jobs[j].spec, phase).walltime;
        let now = q.now();
        {
            let run = &mut self.jobs[j];
            run.units = taken;
            run.status = Status::Active;
            run.alloc_start = phase;
            run.phase = phase;
            run.deadline = now + walltime;
        }
        self.record(q, EventKind::AllocGrant, j, resources);
        let kill =
            q.schedule(now + walltime, EventKind::WalltimeKill, EventPayload::job(job)).map_err(|e| e.to_string())?;
        self.jobs[j].kill = Some(kill);
        self.start_phase(q, j)
    }

    fn expand(&mut self, q: &mut EventQueue, j: usize) -> SimResult {
        let id = self.id(j);
        let Some(target) = self.strategy.expansion_target(&self.jobs[j].spec, self.jobs[j].phase) else {
            self.jobs[j].expand = None;
            return Ok(());
        };
        let held = self.state.nodes_of(id);
        let give = target.saturating_sub(held).min(self.state.free_node_count());
        if give > 0 {
            let ids = self.state.take_nodes(id, give);
            self.record(q, EventKind::Expand, j, ids.into_iter().map(ResourceId::Node).collect());
            if let Some(seg) = self.jobs[j].segment {
                let now = q.now();
                let remaining = (seg.remaining - f64::from(seg.nodes) * (now - seg.start)).max(0.0);
                let nodes = held + give;
                self.jobs[j].segment = Some(Segment { start: now, remaining, nodes });
                if let Some(old) = self.jobs[j].timer.take() {
                    q.cancel(old);
                }
                let end = now + remaining / f64::from(nodes);
                self.timer(q, j, end, EventKind::PhaseEnd, Vec::new())?;
                if self.is_last_phase(j) {
                    self.disarm_kill_if_done_by(q, j, end);
                }
            }
        }
        if held + give >= target {
            self.jobs[j].expand = None;
        }
        Ok(())
    }

    fn dispatch_qpu(&mut self, q: &mut EventQueue, qpu: usize) -> SimResult {
        let waiting = &self.qpu_queues[qpu];
        let Some(pos) = (0..waiting.len())
            .min_by(|&a, &b| waiting[a].0.total_cmp(&waiting[b].0).then(waiting[a].1.cmp(&waiting[b].1)))
        else {
            return Ok(());
        };
        let (_, id, j) = self.qpu_queues[qpu].remove(pos);
        self.state.start_task(qpu, id);
        self.jobs[j].task_state = TaskState::Running(qpu);
        self.record(q, EventKind::QTaskStart, j, vec![ResourceId::Qpu(qpu as u32)]);
        let job = &self.jobs[j];
        let mut rng = task_rng(self.seed, id, job.phase, job.task);
        let duration = effective_task_duration(&self.profiles[qpu], &mut rng);
        let end = q.now() + duration;
        let last_task = matches!(job.spec.phases[job.phase], Phase::Quantum { tasks, .. } if job.task + 1 == tasks);
        self.timer(q, j, end, EventKind::QTaskEnd, vec![ResourceId::Qpu(qpu as u32)])?;
        if last_task && self.is_last_phase(j) {
            self.disarm_kill_if_done_by(q, j, end);
        }
        Ok(())
    }

    fn ordered(&self, key: impl Fn(&JobRun) -> Option<u64>) -> Vec<usize> {
        let mut v: Vec<(u64, usize)> =
            self.jobs.iter().enumerate().filter_map(|(j, r)| key(r).map(|o| (o, j))).collect();
        v.sort_unstable();
        v.into_iter().map(|(_, j)| j).collect()
    }
}

impl Handler for Simulator<'_> {
    fn handle(&mut self, q: &mut EventQueue, event: &SimEvent) -> Result<(), String> {
        match event.kind {
            EventKind::JobSubmit => {
                let j = self.job_index(event)?;
                self.on_submit(q, j)
            }
            EventKind::PhaseEnd | EventKind::QTaskEnqueue | EventKind::QTaskEnd => {
                let j = self.job_index(event)?;
                if self.jobs[j].timer.map(|h| h.seq()) != Some(event.seq) {
                    return Ok(());
                }
                self.jobs[j].timer = None;
                match event.kind {
                    EventKind::PhaseEnd => self.on_phase_end(q, j),
                    EventKind::QTaskEnqueue => self.on_enqueue(q, j),
                    _ => self.on_task_end(q, j),
                }
            }
            EventKind::WalltimeKill => {
                let j = self.job_index(event)?;
                if self.jobs[j].kill.map(|h| h.seq()) != Some(event.seq) {
                    return Err(format!("stale walltime kill for job {}", self.id(j)));
                }
                self.jobs[j].kill = None;
                self.on_kill(q, j)
            }
            EventKind::AllocGrant
            | EventKind::AllocRelease
            | EventKind::PhaseStart
            | EventKind::QTaskStart
            | EventKind::Shrink
            | EventKind::Expand
            | EventKind::JobEnd => Ok(()),
        }
    }

    fn settle(&mut self, q: &mut EventQueue) -> Result<(), String> {
        for j in self.ordered(|r| r.expand.filter(|_| r.status == Status::Active)) {
            self.expand(q, j)?;
        }
        for j in self.ordered(|r| r.resume) {
            self.jobs[j].resume = None;
            self.start_phase(q, j)?;
        }

        let running: Vec<RunningAlloc> = self
            .jobs
            .iter()
            .filter(|r| r.status == Status::Active)
            .map(|r| RunningAlloc {
                deadline: r.deadline,
                nodes: self.state.nodes_of(r.spec.job_id),
                units: r.units.len() as u32,
            })
            .collect();
        let decisions = plan(
            &self.state.wait_queue,
            self.state.free_node_count(),
            self.state.free_unit_count(),
            &running,
            q.now(),
            self.strategy.backfill(),
        );
        for decision in decisions {
            if let StrategyDecision::Grant { job, phase, nodes, units } = decision {
                self.grant(q, job, phase, nodes, units)?;
            }
        }

        for qpu in 0..self.state.qpu_count() {
            if self.state.qpu_idle(qpu) {
                self.dispatch_qpu(q, qpu)?;
            }
        }
        self.state.check()
    }
}
