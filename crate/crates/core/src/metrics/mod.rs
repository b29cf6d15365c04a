//! Utilization and wait metrics computed from a finished trace.
//!
//! Definitions used throughout:
//! - A node is *busy* while its owning job is inside a phase and has no
//!   quantum task outstanding (between `QTaskEnqueue` and `QTaskEnd`).
//!   Classical compute and per-task preparation both count as busy.
//! - A QPU is *busy* between `QTaskStart` and `QTaskEnd`, and *allocated*
//!   while at least one job holds it or a virtual slot on it.
//! - Queue wait is the time from submission (or from a workflow step giving
//!   back all its resources) until the next `AllocGrant`.
//! - The window runs from the first `JobSubmit` to the last event.
//!
//! Integrals are accumulated exactly and rounded once, so the results do
//! not depend on how the trace is decomposed.

mod exact;
pub mod verify;

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use exact::ExactSum;

use crate::engine::Trace;
use crate::model::{ClusterConfig, EventKind, JobId, ResourceId, Seconds, SimEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("malformed trace at event {index}: {reason}")]
    MalformedTrace { index: usize, reason: String },
    #[error("reports are not comparable: {0}")]
    MismatchedWorkload(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JobMetrics {
    pub job_id: JobId,
    pub submit_time: Seconds,
    /// First `AllocGrant`.
    pub start_time: Seconds,
    pub end_time: Seconds,
    pub turnaround: Seconds,
    /// Sum of all queue waits of the job.
    pub queue_wait: Seconds,
    /// Number of allocations the job went through.
    pub allocations: u32,
    pub killed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QpuMetrics {
    pub qpu: u32,
    pub busy: Seconds,
    pub allocated: Seconds,
    pub utilization: f64,
    pub alloc_utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub first_submit: Seconds,
    pub last_event: Seconds,
    pub makespan: Seconds,
    pub qpus: Vec<QpuMetrics>,
    /// Busy QPU time over QPU count × window.
    pub qpu_utilization: f64,
    /// Busy QPU time over allocated QPU time.
    pub qpu_alloc_utilization: f64,
    pub node_busy: f64,
    pub node_allocated: f64,
    /// Busy node-seconds over nodes × window.
    pub node_utilization: f64,
    /// Node-seconds allocated but not busy.
    pub node_idle_allocated: f64,
    /// `node_idle_allocated / node_allocated`.
    pub node_alloc_idle_fraction: f64,
    /// Mean and max over all queue waits (one per allocation).
    pub mean_wait: Seconds,
    pub max_wait: Seconds,
    /// Mean and max time quantum tasks spent queued at a QPU.
    pub mean_task_wait: Seconds,
    pub max_task_wait: Seconds,
    pub killed_jobs: u32,
    pub jobs: Vec<JobMetrics>,
}

/// Flat summary row for CSV and JSON output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRecord {
    pub strategy: String,
    pub jobs: usize,
    pub killed_jobs: u32,
    pub makespan: Seconds,
    pub qpu_utilization: f64,
    pub qpu_alloc_utilization: f64,
    pub node_utilization: f64,
    pub node_idle_allocated: f64,
    pub node_alloc_idle_fraction: f64,
    pub mean_wait: Seconds,
    pub max_wait: Seconds,
    pub mean_task_wait: Seconds,
    pub max_task_wait: Seconds,
}

impl MetricsReport {
    pub fn summary(&self, strategy: &str) -> SummaryRecord {
        SummaryRecord {
            strategy: strategy.to_string(),
            jobs: self.jobs.len(),
            killed_jobs: self.killed_jobs,
            makespan: self.makespan,
            qpu_utilization: self.qpu_utilization,
            qpu_alloc_utilization: self.qpu_alloc_utilization,
            node_utilization: self.node_utilization,
            node_idle_allocated: self.node_idle_allocated,
            node_alloc_idle_fraction: self.node_alloc_idle_fraction,
            mean_wait: self.mean_wait,
            max_wait: self.max_wait,
            mean_task_wait: self.mean_task_wait,
            max_task_wait: self.max_task_wait,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Task {
    None,
    Queued(Seconds),
    Running(u32),
}

#[derive(Debug)]
struct JobTrack {
    submit: Seconds,
    start: Option<Seconds>,
    end: Option<Seconds>,
    waiting_since: Option<Seconds>,
    wait: ExactSum,
    allocations: u32,
    nodes: i64,
    units: Vec<ResourceId>,
    phase: Option<usize>,
    last_phase_end: Option<usize>,
    task: Task,
    killed: bool,
}

impl JobTrack {
    fn busy(&self) -> bool {
        self.phase.is_some() && self.task == Task::None
    }
}

/// Step function integrated exactly: `-Δ·t` at each change plus
/// `final·T` at the end.
#[derive(Debug, Default)]
struct Level {
    value: i64,
    integral: ExactSum,
}

impl Level {
    fn change(&mut self, delta: i64, t: Seconds) {
        if delta != 0 {
            self.value += delta;
            self.integral.add_scaled(-delta, t);
        }
    }

    fn close(mut self, end: Seconds) -> ExactSum {
        self.integral.add_scaled(self.value, end);
        self.integral
    }
}

struct Analyzer {
    index: usize,
    jobs: BTreeMap<JobId, JobTrack>,
    allocated: Level,
    busy: Level,
    qpu_busy: Vec<Level>,
    qpu_alloc: Vec<Level>,
    qpu_holders: Vec<u32>,
    waits: ExactSum,
    wait_count: u64,
    max_wait: f64,
    task_waits: ExactSum,
    task_count: u64,
    max_task_wait: f64,
}

impl Analyzer {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, MetricsError> {
        Err(MetricsError::MalformedTrace { index: self.index, reason: reason.into() })
    }

    fn qpu_index(&self, r: &ResourceId) -> Result<usize, MetricsError> {
        match r.physical_qpu() {
            Some(q) if (q as usize) < self.qpu_busy.len() => Ok(q as usize),
            _ => self.fail(format!("{r} is not a QPU of this cluster")),
        }
    }

    /// Runs `f` on the job and keeps the busy level in step with it.
    fn update<F>(&mut self, id: JobId, t: Seconds, f: F) -> Result<(), MetricsError>
    where
        F: FnOnce(&mut JobTrack) -> Result<(), String>,
    {
        let index = self.index;
        let Some(job) = self.jobs.get_mut(&id) else {
            return self.fail(format!("job {id} was never submitted"));
        };
        if job.end.is_some() {
            return self.fail(format!("job {id} already ended"));
        }
        let before = if job.busy() { job.nodes } else { 0 };
        f(job).map_err(|reason| MetricsError::MalformedTrace { index, reason })?;
        let after = if job.busy() { job.nodes } else { 0 };
        self.busy.change(after - before, t);
        Ok(())
    }

    fn event(&mut self, e: &SimEvent) -> Result<(), MetricsError> {
        let t = e.time;
        let Some(id) = e.job_id else {
            return self.fail(format!("{} without a job id", e.kind));
        };
        let nodes = e.resources.iter().filter(|r| matches!(r, ResourceId::Node(_))).count() as i64;
        let units: Vec<ResourceId> =
            e.resources.iter().filter(|r| !matches!(r, ResourceId::Node(_))).copied().collect();
        let phase = e.phase_index;
        match e.kind {
            EventKind::JobSubmit => {
                if self.jobs.contains_key(&id) {
                    return self.fail(format!("job {id} submitted twice"));
                }
                self.jobs.insert(
                    id,
                    JobTrack {
                        submit: t,
                        start: None,
                        end: None,
                        waiting_since: Some(t),
                        wait: ExactSum::new(),
                        allocations: 0,
                        nodes: 0,
                        units: Vec::new(),
                        phase: None,
                        last_phase_end: None,
                        task: Task::None,
                        killed: false,
                    },
                );
            }
            EventKind::AllocGrant => {
                for u in &units {
                    let q = self.qpu_index(u)?;
                    self.qpu_holders[q] += 1;
                    if self.qpu_holders[q] == 1 {
                        self.qpu_alloc[q].change(1, t);
                    }
                }
                self.allocated.change(nodes, t);
                let mut waited = None;
                self.update(id, t, |j| {
                    let since = j.waiting_since.take().ok_or("grant to a job that is not waiting")?;
                    waited = Some(since);
                    j.wait.add_interval(1, since, t);
                    j.start.get_or_insert(t);
                    j.allocations += 1;
                    j.nodes += nodes;
                    j.units.extend(units.iter().copied());
                    Ok(())
                })?;
                let since = waited.expect("set by update");
                self.waits.add_interval(1, since, t);
                self.wait_count += 1;
                self.max_wait = self.max_wait.max(t - since);
            }
            EventKind::AllocRelease | EventKind::Shrink => {
                for u in &units {
                    let q = self.qpu_index(u)?;
                    if self.qpu_holders[q] == 0 {
                        return self.fail(format!("{u} released but not held"));
                    }
                    self.qpu_holders[q] -= 1;
                    if self.qpu_holders[q] == 0 {
                        self.qpu_alloc[q].change(-1, t);
                    }
                }
                self.allocated.change(-nodes, t);
                let release = e.kind == EventKind::AllocRelease;
                self.update(id, t, |j| {
                    if nodes > j.nodes {
                        return Err(format!("job {id} gives back {nodes} nodes but holds {}", j.nodes));
                    }
                    for u in &units {
                        let pos = j.units.iter().position(|h| h == u).ok_or(format!("job {id} does not hold {u}"))?;
                        j.units.remove(pos);
                    }
                    j.nodes -= nodes;
                    if release && j.nodes == 0 && j.units.is_empty() {
                        j.waiting_since = Some(t);
                    }
                    Ok(())
                })?;
            }
            EventKind::Expand => {
                self.allocated.change(nodes, t);
                self.update(id, t, |j| {
                    j.nodes += nodes;
                    Ok(())
                })?;
            }
            EventKind::PhaseStart => {
                let p = phase.ok_or_else(|| self.missing_phase())?;
                self.update(id, t, |j| {
                    if j.phase.is_some() {
                        return Err(format!("phase {p} of job {id} starts inside another phase"));
                    }
                    let expected = j.last_phase_end.map_or(0, |l| l + 1);
                    if p != expected {
                        return Err(format!("job {id} starts phase {p}, expected {expected}"));
                    }
                    if j.nodes == 0 && j.units.is_empty() {
                        return Err(format!("job {id} starts phase {p} without resources"));
                    }
                    j.phase = Some(p);
                    Ok(())
                })?;
            }
            EventKind::PhaseEnd => {
                let p = phase.ok_or_else(|| self.missing_phase())?;
                self.update(id, t, |j| {
                    if j.phase != Some(p) {
                        return Err(format!("phase {p} of job {id} ends without starting"));
                    }
                    if j.task != Task::None {
                        return Err(format!("phase {p} of job {id} ends with a task outstanding"));
                    }
                    j.phase = None;
                    j.last_phase_end = Some(p);
                    Ok(())
                })?;
            }
            EventKind::QTaskEnqueue => {
                self.update(id, t, |j| {
                    if j.phase.is_none() || j.phase != phase {
                        return Err(format!("job {id} enqueues a task outside its phase"));
                    }
                    if j.task != Task::None {
                        return Err(format!("job {id} enqueues a second task"));
                    }
                    j.task = Task::Queued(t);
                    Ok(())
                })?;
            }
            EventKind::QTaskStart => {
                let [unit] = units[..] else {
                    return self.fail("QTaskStart must name exactly one QPU");
                };
                let q = self.qpu_index(&unit)?;
                if self.qpu_busy[q].value != 0 {
                    return self.fail(format!("QPU {q} starts a task while busy"));
                }
                let mut enqueued = t;
                self.update(id, t, |j| match j.task {
                    Task::Queued(since) => {
                        if !j.units.iter().any(|u| u.physical_qpu() == Some(q as u32)) {
                            return Err(format!("job {id} runs on QPU {q} which it does not hold"));
                        }
                        enqueued = since;
                        j.task = Task::Running(q as u32);
                        Ok(())
                    }
                    _ => Err(format!("job {id} starts a task that was not enqueued")),
                })?;
                self.qpu_busy[q].change(1, t);
                self.task_waits.add_interval(1, enqueued, t);
                self.task_count += 1;
                self.max_task_wait = self.max_task_wait.max(t - enqueued);
            }
            EventKind::QTaskEnd => {
                let [unit] = units[..] else {
                    return self.fail("QTaskEnd must name exactly one QPU");
                };
                let q = self.qpu_index(&unit)?;
                self.update(id, t, |j| {
                    if j.task != Task::Running(q as u32) {
                        return Err(format!("job {id} ends a task that is not running on QPU {q}"));
                    }
                    j.task = Task::None;
                    Ok(())
                })?;
                self.qpu_busy[q].change(-1, t);
            }
            EventKind::WalltimeKill => {
                self.update(id, t, |j| {
                    j.killed = true;
                    Ok(())
                })?;
            }
            EventKind::JobEnd => {
                self.update(id, t, |j| {
                    if j.killed {
                        if let Task::Running(q) = j.task {
                            return Err(format!("killed job {id} still runs on QPU {q}"));
                        }
                        j.phase = None;
                        j.task = Task::None;
                    }
                    if j.phase.is_some() || j.task != Task::None {
                        return Err(format!("job {id} ends inside a phase"));
                    }
                    if j.nodes != 0 || !j.units.is_empty() {
                        return Err(format!("job {id} ends while holding resources"));
                    }
                    j.waiting_since = None;
                    Ok(())
                })?;
                self.jobs.get_mut(&id).expect("checked above").end = Some(t);
            }
        }
        Ok(())
    }

    fn missing_phase(&self) -> MetricsError {
        MetricsError::MalformedTrace { index: self.index, reason: "phase event without a phase index".into() }
    }
}

/// Computes every metric in one pass over `trace`.
///
/// The trace must be complete: strictly ordered by `(time, seq)`, every job
/// submitted once and ended once, and phases, tasks and holdings causally
/// consistent.
pub fn analyze(trace: &Trace, cluster: &ClusterConfig) -> Result<MetricsReport, MetricsError> {
    let qpus = cluster.physical_qpus() as usize;
    let mut a = Analyzer {
        index: 0,
        jobs: BTreeMap::new(),
        allocated: Level::default(),
        busy: Level::default(),
        qpu_busy: (0..qpus).map(|_| Level::default()).collect(),
        qpu_alloc: (0..qpus).map(|_| Level::default()).collect(),
        qpu_holders: vec![0; qpus],
        waits: ExactSum::new(),
        wait_count: 0,
        max_wait: 0.0,
        task_waits: ExactSum::new(),
        task_count: 0,
        max_task_wait: 0.0,
    };
    let Some(first) = trace.events.first() else {
        return a.fail("empty trace");
    };
    if first.kind != EventKind::JobSubmit {
        return a.fail("trace does not start with a JobSubmit");
    }
    let mut prev: Option<(Seconds, u64)> = None;
    for (i, e) in trace.events.iter().enumerate() {
        a.index = i;
        if !e.time.is_finite() {
            return a.fail("non-finite event time");
        }
        if let Some((pt, ps)) = prev {
            if e.time < pt || (e.time == pt && e.seq <= ps) {
                return a.fail("events out of (time, seq) order");
            }
        }
        prev = Some((e.time, e.seq));
        a.event(e)?;
    }
    a.index = trace.events.len();
    if let Some((id, _)) = a.jobs.iter().find(|(_, j)| j.end.is_none()) {
        return a.fail(format!("job {id} never ended"));
    }

    let first_submit = first.time;
    let last_event = trace.events.last().expect("non-empty").time;
    let window = last_event - first_submit;

    let allocated_exact = std::mem::take(&mut a.allocated).close(last_event);
    let busy_exact = std::mem::take(&mut a.busy).close(last_event);
    let (node_allocated, node_busy) = (allocated_exact.value(), busy_exact.value());
    let mut total_busy = ExactSum::new();
    let mut total_alloc = ExactSum::new();
    let qpu_metrics: Vec<QpuMetrics> = std::mem::take(&mut a.qpu_busy)
        .into_iter()
        .zip(std::mem::take(&mut a.qpu_alloc))
        .enumerate()
        .map(|(q, (busy, alloc))| {
            let (busy, alloc) = (busy.close(last_event), alloc.close(last_event));
            total_busy.merge(&busy);
            total_alloc.merge(&alloc);
            let (busy, allocated) = (busy.value(), alloc.value());
            QpuMetrics {
                qpu: q as u32,
                busy,
                allocated,
                utilization: ratio(busy, window),
                alloc_utilization: ratio(busy, allocated),
            }
        })
        .collect();
    let node_idle_allocated = {
        let mut idle = allocated_exact;
        idle.merge(&busy_exact.negated());
        idle.value()
    };

    let jobs: Vec<JobMetrics> = a
        .jobs
        .iter()
        .map(|(&job_id, j)| {
            let end = j.end.expect("checked above");
            JobMetrics {
                job_id,
                submit_time: j.submit,
                start_time: j.start.unwrap_or(end),
                end_time: end,
                turnaround: end - j.submit,
                queue_wait: j.wait.value(),
                allocations: j.allocations,
                killed: j.killed,
            }
        })
        .collect();

    Ok(MetricsReport {
        first_submit,
        last_event,
        makespan: window,
        qpu_utilization: ratio(total_busy.value(), qpus as f64 * window),
        qpu_alloc_utilization: ratio(total_busy.value(), total_alloc.value()),
        qpus: qpu_metrics,
        node_busy,
        node_allocated,
        node_utilization: ratio(node_busy, f64::from(cluster.classical_nodes) * window),
        node_idle_allocated,
        node_alloc_idle_fraction: ratio(node_idle_allocated, node_allocated),
        mean_wait: ratio(a.waits.value(), a.wait_count as f64),
        max_wait: a.max_wait,
        mean_task_wait: ratio(a.task_waits.value(), a.task_count as f64),
        max_task_wait: a.max_task_wait,
        killed_jobs: jobs.iter().filter(|j| j.killed).count() as u32,
        jobs,
    })
}

/// Which side of the hybrid allocation sits idle more.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Imbalance {
    /// The QPU idles waiting for classical work.
    QuantumStarved,
    /// Classical nodes idle waiting for quantum results.
    ClassicalStarved,
}

impl Imbalance {
    /// Quantum-starved when the QPU's idle share of its allocation exceeds
    /// the nodes' idle share of theirs; ties count as classical-starved.
    pub fn of(report: &MetricsReport) -> Self {
        let qpu_idle = 1.0 - report.qpu_alloc_utilization;
        if qpu_idle > report.node_alloc_idle_fraction {
            Imbalance::QuantumStarved
        } else {
            Imbalance::ClassicalStarved
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Imbalance::QuantumStarved => "quantum-starved",
            Imbalance::ClassicalStarved => "classical-starved",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    #[serde(flatten)]
    pub summary: SummaryRecord,
    pub delta_qpu_utilization: f64,
    pub delta_node_utilization: f64,
    pub delta_node_idle_allocated: f64,
    pub delta_makespan: f64,
    pub delta_mean_wait: f64,
    pub imbalance: Imbalance,
}

/// Side-by-side summaries; deltas are relative to the first row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, strategy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.summary.strategy == strategy)
    }
}

/// Compares reports of the same workload run under different strategies.
pub fn compare(reports: &[(String, MetricsReport)]) -> Result<ComparisonTable, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::MismatchedWorkload(format!("need at least two reports, got {}", reports.len())));
    }
    let jobs_of = |r: &MetricsReport| r.jobs.iter().map(|j| (j.job_id, j.submit_time.to_bits())).collect::<Vec<_>>();
    let (base_name, base) = &reports[0];
    let base_jobs = jobs_of(base);
    for (name, r) in &reports[1..] {
        if jobs_of(r) != base_jobs {
            return Err(MetricsError::MismatchedWorkload(format!("{name} ran a different job set than {base_name}")));
        }
    }
    let rows = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            summary: r.summary(name),
            delta_qpu_utilization: r.qpu_utilization - base.qpu_utilization,
            delta_node_utilization: r.node_utilization - base.node_utilization,
            delta_node_idle_allocated: r.node_idle_allocated - base.node_idle_allocated,
            delta_makespan: r.makespan - base.makespan,
            delta_mean_wait: r.mean_wait - base.mean_wait,
            imbalance: Imbalance::of(r),
        })
        .collect();
    Ok(ComparisonTable { baseline: base_name.clone(), rows })
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRecord]) -> Result<(), csv::Error> {
    write_rows(out, rows)
}

/// One row per job and run, runs in the given order.
pub fn write_jobs_csv<W: Write>(out: W, runs: &[(&str, &MetricsReport)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "job_id",
        "submit_time",
        "start_time",
        "end_time",
        "turnaround",
        "queue_wait",
        "allocations",
        "killed",
    ])?;
    for (strategy, j) in runs.iter().flat_map(|(s, r)| r.jobs.iter().map(move |j| (s, j))) {
        w.write_record([
            strategy.to_string(),
            j.job_id.to_string(),
            j.submit_time.to_string(),
            j.start_time.to_string(),
            j.end_time.to_string(),
            j.turnaround.to_string(),
            j.queue_wait.to_string(),
            j.allocations.to_string(),
            j.killed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(out: W, table: &ComparisonTable) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "makespan",
        "qpu_utilization",
        "qpu_alloc_utilization",
        "node_utilization",
        "node_idle_allocated",
        "node_alloc_idle_fraction",
        "mean_wait",
        "max_wait",
        "killed_jobs",
        "delta_qpu_utilization",
        "delta_node_utilization",
        "delta_node_idle_allocated",
        "delta_makespan",
        "delta_mean_wait",
        "imbalance",
    ])?;
    for r in &table.rows {
        let s = &r.summary;
        w.write_record([
            s.strategy.clone(),
            s.makespan.to_string(),
            s.qpu_utilization.to_string(),
            s.qpu_alloc_utilization.to_string(),
            s.node_utilization.to_string(),
            s.node_idle_allocated.to_string(),
            s.node_alloc_idle_fraction.to_string(),
            s.mean_wait.to_string(),
            s.max_wait.to_string(),
            s.killed_jobs.to_string(),
            r.delta_qpu_utilization.to_string(),
            r.delta_node_utilization.to_string(),
            r.delta_node_idle_allocated.to_string(),
            r.delta_makespan.to_string(),
            r.delta_mean_wait.to_string(),
            r.imbalance.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
