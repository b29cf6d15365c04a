//! Seeded synthetic workloads and the canonical single-job scenarios.
//!
//! Generation uses ChaCha8 (`rand_chacha`, seeded with `seed_from_u64`).
//! A uniform real is `(next_u64 >> 11) * 2^-53`; a uniform count in
//! `[min, max]` is `min + floor(u * (max - min + 1))`; Poisson inter-arrival
//! gaps are `-ln(1 - u) / rate`. Per job the draws happen in this order: the
//! arrival gap (Poisson only), the node count, then each phase template's
//! parameters in pattern order (`work`; or `tasks` then `prep_time`).

use std::io::{BufRead, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetjob::parse_hetjob;
use crate::model::{
    unit_f64, ClusterConfig, JobId, JobSpec, Partition, Phase, QpuTechnologyProfile, ResourceRequest, Seconds,
};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload profile: {0}")]
    InvalidProfile(String),
    #[error("unknown scenario technology {0:?} (expected superconducting or neutral-atoms)")]
    UnknownTechnology(String),
    #[error("workload file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDist {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
}

impl ValueDist {
    fn sample(&self, rng: &mut impl RngCore) -> f64 {
        match *self {
            ValueDist::Fixed(v) => v,
            ValueDist::Uniform { min, max } => min + (max - min) * unit_f64(rng),
        }
    }

    fn check(&self, what: &str, allow_zero: bool) -> Result<(), WorkloadError> {
        let ok = |v: f64| v.is_finite() && if allow_zero { v >= 0.0 } else { v > 0.0 };
        let valid = match *self {
            ValueDist::Fixed(v) => ok(v),
            ValueDist::Uniform { min, max } => ok(min) && ok(max) && min <= max,
        };
        if valid {
            Ok(())
        } else {
            Err(WorkloadError::InvalidProfile(format!("{what}: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountDist {
    Fixed(u32),
    Uniform { min: u32, max: u32 },
}

impl CountDist {
    fn sample(&self, rng: &mut impl RngCore) -> u32 {
        match *self {
            CountDist::Fixed(n) => n,
            CountDist::Uniform { min, max } => {
                let span = f64::from(max - min) + 1.0;
                (min + (unit_f64(rng) * span) as u32).min(max)
            }
        }
    }

    fn max(&self) -> u32 {
        match *self {
            CountDist::Fixed(n) => n,
            CountDist::Uniform { max, .. } => max,
        }
    }

    fn min(&self) -> u32 {
        match *self {
            CountDist::Fixed(n) => n,
            CountDist::Uniform { min, .. } => min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhaseTemplate {
    Classical { work: ValueDist },
    Quantum { tasks: CountDist, prep_time: ValueDist },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Arrival {
    AllAtZero,
    Poisson { rate_per_hour: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub job_count: u32,
    pub arrival: Arrival,
    pub phase_pattern: Vec<PhaseTemplate>,
    /// Classical nodes requested per job.
    pub nodes: CountDist,
    #[serde(default = "one")]
    pub qpu_gres: u32,
    /// Walltime of every component.
    pub walltime: Seconds,
    pub technology: String,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u32 {
    1
}

impl WorkloadProfile {
    fn has_quantum(&self) -> bool {
        self.phase_pattern.iter().any(|p| matches!(p, PhaseTemplate::Quantum { .. }))
    }

    fn has_classical(&self) -> bool {
        self.phase_pattern.iter().any(|p| matches!(p, PhaseTemplate::Classical { .. }))
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let invalid = |m: &str| Err(WorkloadError::InvalidProfile(m.to_string()));
        if self.job_count > 0 && self.phase_pattern.is_empty() {
            return invalid("phase_pattern is empty");
        }
        if let Arrival::Poisson { rate_per_hour } = self.arrival {
            if !(rate_per_hour.is_finite() && rate_per_hour > 0.0) {
                return invalid("poisson rate_per_hour must be > 0");
            }
        }
        if !(self.walltime.is_finite() && self.walltime > 0.0) {
            return invalid("walltime must be > 0");
        }
        if self.nodes.min() > self.nodes.max() {
            return invalid("nodes: min > max");
        }
        if self.has_classical() && self.nodes.min() == 0 {
            return invalid("classical phases need at least one node");
        }
        if self.has_quantum() && self.qpu_gres == 0 {
            return invalid("quantum phases need qpu_gres >= 1");
        }
        for (i, t) in self.phase_pattern.iter().enumerate() {
            match t {
                PhaseTemplate::Classical { work } => work.check(&format!("phase {i} work"), false)?,
                PhaseTemplate::Quantum { tasks, prep_time } => {
                    if tasks.min() == 0 || tasks.min() > tasks.max() {
                        return invalid(&format!("phase {i}: tasks must be >= 1 with min <= max"));
                    }
                    prep_time.check(&format!("phase {i} prep_time"), true)?;
                }
            }
        }
        Ok(())
    }

    /// Checks that every job this profile can produce fits `cluster`.
    pub fn validate_for(&self, cluster: &ClusterConfig, virtual_qpus: bool) -> Result<(), WorkloadError> {
        self.validate()?;
        if !cluster.qpus.iter().any(|p| p.profile.name == self.technology) {
            return Err(WorkloadError::InvalidProfile(format!(
                "technology {:?} is not in the cluster",
                self.technology
            )));
        }
        if self.nodes.max() > cluster.classical_nodes {
            return Err(WorkloadError::InvalidProfile(format!(
                "up to {} nodes per job, cluster has {}",
                self.nodes.max(),
                cluster.classical_nodes
            )));
        }
        let qpus = if virtual_qpus { cluster.virtual_qpus() } else { cluster.physical_qpus() };
        if self.has_quantum() && self.qpu_gres > qpus {
            return Err(WorkloadError::InvalidProfile(format!(
                "qpu_gres {} exceeds the {qpus} available",
                self.qpu_gres
            )));
        }
        Ok(())
    }
}

/// Deterministic job list for `profile`, ids `1..=job_count`, submit times
/// ascending.
pub fn generate(profile: &WorkloadProfile) -> Result<Vec<JobSpec>, WorkloadError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut now = 0.0;
    let mut jobs = Vec::with_capacity(profile.job_count as usize);
    for id in 1..=u64::from(profile.job_count) {
        if let Arrival::Poisson { rate_per_hour } = profile.arrival {
            let u = unit_f64(&mut rng);
            now += -(1.0 - u).ln() / (rate_per_hour / 3600.0);
        }
        let nodes = profile.nodes.sample(&mut rng);
        let phases: Vec<Phase> = profile
            .phase_pattern
            .iter()
            .map(|t| match t {
                PhaseTemplate::Classical { work } => Phase::Classical { work: work.sample(&mut rng) },
                PhaseTemplate::Quantum { tasks, prep_time } => {
                    let tasks = tasks.sample(&mut rng);
                    Phase::Quantum { tasks, prep_time_per_task: prep_time.sample(&mut rng) }
                }
            })
            .collect();
        let mut requests = Vec::new();
        if nodes > 0 {
            requests.push(ResourceRequest {
                component_id: 0,
                partition: Partition::Classical,
                nodes,
                qpu_gres: 0,
                walltime: profile.walltime,
            });
        }
        if profile.has_quantum() {
            requests.push(ResourceRequest {
                component_id: requests.len(),
                partition: Partition::Quantum,
                nodes: 0,
                qpu_gres: profile.qpu_gres,
                walltime: profile.walltime,
            });
        }
        jobs.push(JobSpec { job_id: JobId(id), submit_time: now, requests, phases });
    }
    Ok(jobs)
}

/// The hybrid job script used by both canonical scenarios.
pub const LISTING_1: &str = "#!/bin/bash
#SBATCH --partition classical
#SBATCH --nodes 10
#SBATCH --time=01:00:00
#SBATCH hetjob
#SBATCH --partition quantum
#SBATCH --gres=qpu:1
#SBATCH --time=01:00:00

srun ./hybrid_job
";

/// Tasks and prep time of the superconducting scenario: 60 × (50 s prep +
/// 10 s task) fills the one-hour allocation.
pub const SUPERCONDUCTING_TASKS: u32 = 60;
pub const SUPERCONDUCTING_PREP: Seconds = 50.0;
/// Classical work before and after the single neutral-atom task: 900 s on
/// 10 nodes each.
pub const NEUTRAL_ATOMS_CLASSICAL_WORK: f64 = 9000.0;

fn listing_requests() -> Vec<ResourceRequest> {
    parse_hetjob(LISTING_1).expect("embedded listing parses").requests
}

fn scenario_job(id: u64, tech: &str) -> Result<JobSpec, WorkloadError> {
    let phases = match tech {
        "superconducting" => {
            vec![Phase::Quantum { tasks: SUPERCONDUCTING_TASKS, prep_time_per_task: SUPERCONDUCTING_PREP }]
        }
        "neutral-atoms" => vec![
            Phase::Classical { work: NEUTRAL_ATOMS_CLASSICAL_WORK },
            Phase::Quantum { tasks: 1, prep_time_per_task: 0.0 },
            Phase::Classical { work: NEUTRAL_ATOMS_CLASSICAL_WORK },
        ],
        other => return Err(WorkloadError::UnknownTechnology(other.to_string())),
    };
    Ok(JobSpec { job_id: JobId(id), submit_time: 0.0, requests: listing_requests(), phases })
}

/// The one-hour, 10-node, 1-QPU scenario with a single hybrid job.
pub fn paper_scenario(tech: &str) -> Result<(ClusterConfig, Vec<JobSpec>), WorkloadError> {
    let job = scenario_job(1, tech)?;
    let profile = QpuTechnologyProfile::builtin(tech).expect("scenario technologies are built in");
    Ok((ClusterConfig::homogeneous(10, profile, 1), vec![job]))
}

/// The same scenario with contention.
///
/// Superconducting: two copies of the job on a 20-node cluster sharing one
/// QPU. Neutral atoms: the job plus a 9-node classical job of 1800 s that
/// fits into the nodes freed during the quantum phase.
pub fn contended_scenario(tech: &str) -> Result<(ClusterConfig, Vec<JobSpec>), WorkloadError> {
    let (mut cluster, mut jobs) = paper_scenario(tech)?;
    match tech {
        "superconducting" => {
            cluster.classical_nodes = 20;
            jobs.push(scenario_job(2, tech)?);
        }
        _ => jobs.push(JobSpec {
            job_id: JobId(2),
            submit_time: 0.0,
            requests: vec![ResourceRequest {
                component_id: 0,
                partition: Partition::Classical,
                nodes: 9,
                qpu_gres: 0,
                walltime: 1800.0,
            }],
            phases: vec![Phase::Classical { work: 9.0 * 1800.0 }],
        }),
    }
    Ok((cluster, jobs))
}

/// Writes one JSON job per line.
pub fn write_jobs<W: Write>(mut out: W, jobs: &[JobSpec]) -> Result<(), WorkloadError> {
    for job in jobs {
        serde_json::to_writer(&mut out, job).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jobs<R: BufRead>(input: R) -> Result<Vec<JobSpec>, WorkloadError> {
    let mut jobs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let job =
            serde_json::from_str(&line).map_err(|e| WorkloadError::Format { line: i + 1, message: e.to_string() })?;
        jobs.push(job);
    }
    Ok(jobs)
}
