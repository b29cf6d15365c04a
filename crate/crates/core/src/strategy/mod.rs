//! Allocation strategies for hybrid jobs and the simulator that drives them.
//!
//! Every strategy implements [`AllocationStrategy`]. The simulator asks it
//! what a job requests when it joins the queue, how long the allocation may
//! run, and what happens to held resources at each phase boundary.

mod coschedule;
mod malleable;
pub mod queue;
mod sim;
pub mod state;
mod vqpu;
mod workflow;

use serde::{Deserialize, Serialize};

use crate::model::{ClusterConfig, JobSpec, Phase, QpuAccess, Seconds};

pub use coschedule::Coschedule;
pub use malleable::Malleable;
pub use queue::{plan, RunningAlloc, StrategyDecision};
pub use sim::{simulate, simulate_with, SimError};
pub use state::{ClusterState, Demand, WaitEntry};
pub use vqpu::VirtualQpu;
pub use workflow::Workflow;

/// What a job does with its resources when a phase ends and another follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Keep everything and start the next phase.
    Continue,
    /// Release everything and queue the next phase as a new request.
    ReleaseAll,
    /// Keep only this many nodes.
    Shrink { keep: u32 },
}

pub trait AllocationStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn qpu_access(&self) -> QpuAccess {
        QpuAccess::Exclusive
    }

    fn backfill(&self) -> bool {
        false
    }

    /// Request placed in the wait queue for an allocation starting at `phase`.
    fn demand(&self, job: &JobSpec, _phase: usize) -> Demand {
        Demand { nodes: job.total_nodes(), units: job.total_qpu_gres(), walltime: job.job_walltime() }
    }

    /// Whether an allocation starting at `start` ends together with `phase`.
    fn last_phase_of_allocation(&self, job: &JobSpec, _start: usize, phase: usize) -> bool {
        phase + 1 == job.phases.len()
    }

    fn boundary(&self, _job: &JobSpec, _finished: usize, _held_nodes: u32) -> Boundary {
        Boundary::Continue
    }

    /// Node count a job wants while running `phase`, when it may grow back
    /// after shrinking.
    fn expansion_target(&self, _job: &JobSpec, _phase: usize) -> Option<u32> {
        None
    }
}

/// Strategy selection with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Strategy {
    Coschedule,
    Workflow {
        #[serde(default)]
        backfill: bool,
    },
    Vqpu {
        k: u32,
    },
    Malleable {
        #[serde(default = "default_retain")]
        retain: u32,
        #[serde(default)]
        backfill: bool,
    },
}

fn default_retain() -> u32 {
    1
}

impl Strategy {
    pub const NAMES: [&'static str; 4] = ["coschedule", "workflow", "vqpu", "malleable"];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Coschedule => "coschedule",
            Strategy::Workflow { .. } => "workflow",
            Strategy::Vqpu { .. } => "vqpu",
            Strategy::Malleable { .. } => "malleable",
        }
    }

    /// Builds a strategy by name from shared parameters.
    pub fn from_name(name: &str, k: u32, retain: u32, backfill: bool) -> Option<Strategy> {
        Some(match name {
            "coschedule" => Strategy::Coschedule,
            "workflow" => Strategy::Workflow { backfill },
            "vqpu" => Strategy::Vqpu { k },
            "malleable" => Strategy::Malleable { retain, backfill },
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Strategy::Vqpu { k: 0 } => Err("strategy.k must be >= 1".into()),
            Strategy::Malleable { retain: 0, .. } => Err("strategy.retain must be >= 1".into()),
            _ => Ok(()),
        }
    }

    /// The cluster as this strategy sees it: `vqpu` replaces the number of
    /// virtual QPUs per physical QPU with its own `k`.
    pub fn cluster_for(&self, cluster: &ClusterConfig) -> ClusterConfig {
        match *self {
            Strategy::Vqpu { k } => cluster.clone().with_vqpus(k),
            _ => cluster.clone(),
        }
    }

    pub fn qpu_access(&self) -> QpuAccess {
        self.policy().qpu_access()
    }

    pub fn policy(&self) -> Box<dyn AllocationStrategy> {
        match *self {
            Strategy::Coschedule => Box::new(Coschedule),
            Strategy::Workflow { backfill } => Box::new(Workflow { backfill }),
            Strategy::Vqpu { k } => Box::new(VirtualQpu { k }),
            Strategy::Malleable { retain, backfill } => Box::new(Malleable { retain, backfill }),
        }
    }
}

pub(crate) fn is_classical(phase: &Phase) -> bool {
    matches!(phase, Phase::Classical { .. })
}

pub(crate) fn walltime_for(job: &JobSpec, phase: &Phase) -> Seconds {
    job.walltime_of(phase.partition()).unwrap_or_else(|| job.job_walltime())
}
