//! Domain types shared across the simulator: cluster resources, QPU
//! technologies, hybrid jobs and their phases, and trace events.

use std::collections::HashSet;
use std::fmt;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in seconds.
pub type Seconds = f64;

/// Identifier of a job within a workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How long a single quantum task takes before calibration is added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskDuration {
    Fixed { seconds: Seconds },
    Uniform { min: Seconds, max: Seconds },
}

/// Per-technology quantum task duration model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpuTechnologyProfile {
    pub name: String,
    pub task_duration: TaskDuration,
    /// Added once per quantum task (register calibration).
    #[serde(default)]
    pub calibration_overhead: Seconds,
}

impl QpuTechnologyProfile {
    /// Superconducting QPU: every task takes 10 s.
    pub fn superconducting() -> Self {
        Self {
            name: "superconducting".into(),
            task_duration: TaskDuration::Fixed { seconds: 10.0 },
            calibration_overhead: 0.0,
        }
    }

    /// Neutral-atom QPU: 1500 s of execution plus 300 s register calibration,
    /// i.e. 30 minutes per task.
    pub fn neutral_atoms() -> Self {
        Self {
            name: "neutral-atoms".into(),
            task_duration: TaskDuration::Fixed { seconds: 1500.0 },
            calibration_overhead: 300.0,
        }
    }

    /// Placeholder profile for trapped-ion machines. The numbers are a
    /// configurable guess, not a measured figure.
    pub fn trapped_ion_placeholder() -> Self {
        Self {
            name: "trapped-ion".into(),
            task_duration: TaskDuration::Uniform { min: 60.0, max: 300.0 },
            calibration_overhead: 0.0,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "superconducting" => Some(Self::superconducting()),
            "neutral-atoms" => Some(Self::neutral_atoms()),
            "trapped-ion" => Some(Self::trapped_ion_placeholder()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::InvalidProfile { name: self.name.clone(), reason });
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        if !(self.calibration_overhead.is_finite() && self.calibration_overhead >= 0.0) {
            return bad(format!("calibration_overhead must be >= 0, got {}", self.calibration_overhead));
        }
        match self.task_duration {
            TaskDuration::Fixed { seconds } => {
                if !(seconds.is_finite() && seconds > 0.0) {
                    return bad(format!("fixed duration must be > 0, got {seconds}"));
                }
            }
            TaskDuration::Uniform { min, max } => {
                if !(min.is_finite() && max.is_finite() && min > 0.0) {
                    return bad(format!("uniform bounds must be finite and > 0, got [{min}, {max}]"));
                }
                if min > max {
                    return bad(format!("uniform requires min <= max, got [{min}, {max}]"));
                }
            }
        }
        Ok(())
    }
}

/// Draws a uniform value in `[0, 1)` from the top 53 bits of one `next_u64`.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sampled task duration plus calibration overhead.
///
/// Fixed durations consume no randomness; uniform durations consume exactly
/// one `next_u64`.
pub fn effective_task_duration<R: RngCore + ?Sized>(profile: &QpuTechnologyProfile, rng: &mut R) -> Seconds {
    let base = match profile.task_duration {
        TaskDuration::Fixed { seconds } => seconds,
        TaskDuration::Uniform { min, max } => min + (max - min) * unit_f64(rng),
    };
    base + profile.calibration_overhead
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Classical,
    Quantum,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Classical => "classical",
            Partition::Quantum => "quantum",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Partition {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" => Ok(Partition::Classical),
            "quantum" => Ok(Partition::Quantum),
            _ => Err(()),
        }
    }
}

/// One component of a heterogeneous job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceRequest {
    pub component_id: usize,
    pub partition: Partition,
    #[serde(default)]
    pub nodes: u32,
    #[serde(default)]
    pub qpu_gres: u32,
    pub walltime: Seconds,
}

/// A step of a hybrid job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Phase {
    /// Node-seconds of work; runs for `work / nodes` on `nodes` nodes.
    Classical { work: f64 },
    /// `tasks` quantum tasks, each preceded by `prep_time_per_task` seconds of
    /// classical preparation.
    Quantum {
        tasks: u32,
        #[serde(default)]
        prep_time_per_task: Seconds,
    },
}

impl Phase {
    pub fn is_quantum(&self) -> bool {
        matches!(self, Phase::Quantum { .. })
    }

    pub fn partition(&self) -> Partition {
        match self {
            Phase::Classical { .. } => Partition::Classical,
            Phase::Quantum { .. } => Partition::Quantum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: JobId,
    pub submit_time: Seconds,
    pub requests: Vec<ResourceRequest>,
    pub phases: Vec<Phase>,
}

impl JobSpec {
    pub fn total_nodes(&self) -> u32 {
        self.requests.iter().map(|r| r.nodes).sum()
    }

    pub fn total_qpu_gres(&self) -> u32 {
        self.requests.iter().map(|r| r.qpu_gres).sum()
    }

    /// Shortest walltime among the components of `partition`, if any.
    pub fn walltime_of(&self, partition: Partition) -> Option<Seconds> {
        self.requests.iter().filter(|r| r.partition == partition).map(|r| r.walltime).reduce(f64::min)
    }

    /// Walltime of the whole allocation: the shortest component walltime.
    pub fn job_walltime(&self) -> Seconds {
        self.requests.iter().map(|r| r.walltime).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpuPool {
    pub profile: QpuTechnologyProfile,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub classical_nodes: u32,
    pub qpus: Vec<QpuPool>,
    /// Virtual QPUs exposed per physical QPU; only the VQPU strategy uses it.
    #[serde(default = "default_vqpus")]
    pub vqpus_per_qpu: u32,
}

fn default_vqpus() -> u32 {
    1
}

impl ClusterConfig {
    /// `classical_nodes` nodes and `qpus` physical QPUs of a single technology.
    pub fn homogeneous(classical_nodes: u32, profile: QpuTechnologyProfile, qpus: u32) -> Self {
        Self { classical_nodes, qpus: vec![QpuPool { profile, count: qpus }], vqpus_per_qpu: 1 }
    }

    pub fn with_vqpus(mut self, k: u32) -> Self {
        self.vqpus_per_qpu = k;
        self
    }

    pub fn physical_qpus(&self) -> u32 {
        self.qpus.iter().map(|p| p.count).sum()
    }

    pub fn virtual_qpus(&self) -> u32 {
        self.physical_qpus() * self.vqpus_per_qpu
    }

    /// Technology profile of each physical QPU, indexed by QPU id.
    pub fn qpu_profiles(&self) -> Vec<&QpuTechnologyProfile> {
        self.qpus.iter().flat_map(|p| std::iter::repeat_n(&p.profile, p.count as usize)).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.classical_nodes == 0 {
            return Err(ModelError::InvalidCluster("classical_nodes must be > 0".into()));
        }
        if self.physical_qpus() == 0 {
            return Err(ModelError::InvalidCluster("at least one QPU is required".into()));
        }
        if self.vqpus_per_qpu == 0 {
            return Err(ModelError::InvalidCluster("vqpus_per_qpu must be >= 1".into()));
        }
        for pool in &self.qpus {
            pool.profile.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid QPU profile {name:?}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
}

/// Whether quantum requests are counted against physical QPUs or against
/// virtual QPU leases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpuAccess {
    Exclusive,
    Virtual,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("job {job}: component {component} is unsatisfiable: {reason}")]
    Unsatisfiable { job: JobId, component: usize, reason: String },
    #[error("job {job}: malformed spec: {reason}")]
    MalformedSpec { job: JobId, reason: String },
    #[error("duplicate job id {0}")]
    DuplicateJobId(JobId),
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Checks a job's own invariants and that each component fits on `cluster`.
pub fn validate_job(spec: &JobSpec, cluster: &ClusterConfig, access: QpuAccess) -> Result<(), ValidationError> {
    let job = spec.job_id;
    let malformed = |reason: &str| Err(ValidationError::MalformedSpec { job, reason: reason.to_string() });
    if spec.requests.is_empty() {
        return malformed("job has no resource requests");
    }
    if spec.phases.is_empty() {
        return malformed("job has no phases");
    }
    if !(spec.submit_time.is_finite() && spec.submit_time >= 0.0) {
        return malformed("submit_time must be finite and >= 0");
    }
    for (i, req) in spec.requests.iter().enumerate() {
        if req.component_id != i {
            return malformed(&format!("component {i} has component_id {}", req.component_id));
        }
        if !positive(req.walltime) {
            return malformed(&format!("component {i}: walltime must be > 0"));
        }
        match req.partition {
            Partition::Classical if req.qpu_gres != 0 => {
                return malformed(&format!("component {i}: classical component requests qpu gres"))
            }
            Partition::Quantum if req.nodes != 0 => {
                return malformed(&format!("component {i}: quantum component requests nodes"))
            }
            _ => {}
        }
    }
    for (i, phase) in spec.phases.iter().enumerate() {
        match *phase {
            Phase::Classical { work } if !positive(work) => {
                return malformed(&format!("phase {i}: classical work must be > 0"))
            }
            Phase::Quantum { tasks, prep_time_per_task } => {
                if tasks == 0 {
                    return malformed(&format!("phase {i}: quantum phase needs at least one task"));
                }
                if !(prep_time_per_task.is_finite() && prep_time_per_task >= 0.0) {
                    return malformed(&format!("phase {i}: prep_time_per_task must be >= 0"));
                }
            }
            _ => {}
        }
    }
    if spec.phases.iter().any(|p| !p.is_quantum()) && spec.total_nodes() == 0 {
        return malformed("classical phases present but no nodes requested");
    }
    if spec.phases.iter().any(Phase::is_quantum) && spec.total_qpu_gres() == 0 {
        return malformed("quantum phases present but no qpu gres requested");
    }

    let qpu_capacity = match access {
        QpuAccess::Exclusive => cluster.physical_qpus(),
        QpuAccess::Virtual => cluster.virtual_qpus(),
    };
    for req in &spec.requests {
        let unsat = |reason: String| Err(ValidationError::Unsatisfiable { job, component: req.component_id, reason });
        if req.nodes > cluster.classical_nodes {
            return unsat(format!("{} nodes requested, cluster has {}", req.nodes, cluster.classical_nodes));
        }
        if req.qpu_gres > qpu_capacity {
            return unsat(format!("qpu:{} requested, cluster exposes {qpu_capacity}", req.qpu_gres));
        }
    }
    // Components are co-allocated, so their sum has to fit as well.
    if spec.total_nodes() > cluster.classical_nodes {
        return Err(ValidationError::Unsatisfiable {
            job,
            component: 0,
            reason: format!("{} nodes requested in total, cluster has {}", spec.total_nodes(), cluster.classical_nodes),
        });
    }
    if spec.total_qpu_gres() > qpu_capacity {
        return Err(ValidationError::Unsatisfiable {
            job,
            component: 0,
            reason: format!("qpu:{} requested in total, cluster exposes {qpu_capacity}", spec.total_qpu_gres()),
        });
    }
    Ok(())
}

/// Validates every job and checks job ids are unique.
pub fn validate_workload(jobs: &[JobSpec], cluster: &ClusterConfig, access: QpuAccess) -> Result<(), ValidationError> {
    let mut seen = HashSet::new();
    for job in jobs {
        if !seen.insert(job.job_id) {
            return Err(ValidationError::DuplicateJobId(job.job_id));
        }
        validate_job(job, cluster, access)?;
    }
    Ok(())
}

/// A concrete schedulable resource named in a trace event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResourceId {
    Node(u32),
    Qpu(u32),
    Vqpu { qpu: u32, slot: u32 },
}

impl ResourceId {
    /// Physical QPU behind a QPU or VQPU resource.
    pub fn physical_qpu(self) -> Option<u32> {
        match self {
            ResourceId::Node(_) => None,
            ResourceId::Qpu(q) | ResourceId::Vqpu { qpu: q, .. } => Some(q),
        }
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceId::Node(n) => write!(f, "n{n}"),
            ResourceId::Qpu(q) => write!(f, "q{q}"),
            ResourceId::Vqpu { qpu, slot } => write!(f, "v{qpu}.{slot}"),
        }
    }
}

impl std::str::FromStr for ResourceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad resource id {s:?}");
        let num = |t: &str| t.parse::<u32>().map_err(|_| bad());
        match s.split_at_checked(1) {
            Some(("n", rest)) => Ok(ResourceId::Node(num(rest)?)),
            Some(("q", rest)) => Ok(ResourceId::Qpu(num(rest)?)),
            Some(("v", rest)) => {
                let (q, slot) = rest.split_once('.').ok_or_else(bad)?;
                Ok(ResourceId::Vqpu { qpu: num(q)?, slot: num(slot)? })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    JobSubmit,
    AllocGrant,
    AllocRelease,
    PhaseStart,
    PhaseEnd,
    QTaskEnqueue,
    QTaskStart,
    QTaskEnd,
    Shrink,
    Expand,
    /// Walltime expired before the allocation finished its work.
    WalltimeKill,
    JobEnd,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::JobSubmit,
        EventKind::AllocGrant,
        EventKind::AllocRelease,
        EventKind::PhaseStart,
        EventKind::PhaseEnd,
        EventKind::QTaskEnqueue,
        EventKind::QTaskStart,
        EventKind::QTaskEnd,
        EventKind::Shrink,
        EventKind::Expand,
        EventKind::WalltimeKill,
        EventKind::JobEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::JobSubmit => "JobSubmit",
            EventKind::AllocGrant => "AllocGrant",
            EventKind::AllocRelease => "AllocRelease",
            EventKind::PhaseStart => "PhaseStart",
            EventKind::PhaseEnd => "PhaseEnd",
            EventKind::QTaskEnqueue => "QTaskEnqueue",
            EventKind::QTaskStart => "QTaskStart",
            EventKind::QTaskEnd => "QTaskEnd",
            EventKind::Shrink => "Shrink",
            EventKind::Expand => "Expand",
            EventKind::WalltimeKill => "WalltimeKill",
            EventKind::JobEnd => "JobEnd",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

/// Payload carried by an event.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventPayload {
    pub job_id: Option<JobId>,
    pub phase_index: Option<usize>,
    pub resources: Vec<ResourceId>,
}

impl EventPayload {
    pub fn job(job_id: JobId) -> Self {
        Self { job_id: Some(job_id), ..Self::default() }
    }

    pub fn phase(job_id: JobId, phase_index: usize) -> Self {
        Self { job_id: Some(job_id), phase_index: Some(phase_index), resources: Vec::new() }
    }

    pub fn with_resources(mut self, resources: Vec<ResourceId>) -> Self {
        self.resources = resources;
        self
    }
}

/// A timestamped trace record. Events are totally ordered by `(time, seq)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent {
    pub time: Seconds,
    pub seq: u64,
    pub kind: EventKind,
    pub job_id: Option<JobId>,
    pub phase_index: Option<usize>,
    pub resources: Vec<ResourceId>,
}
