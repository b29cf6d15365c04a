use crate::model::{JobSpec, Phase};

use super::{walltime_for, AllocationStrategy, Boundary, Demand};

/// Every phase is an independent step queued on its own partition when the
/// previous one ends. Classical steps hold only nodes, quantum steps only QPUs.
#[derive(Clone, Copy, Debug, Default)]
pub struct Workflow {
    pub backfill: bool,
}

impl AllocationStrategy for Workflow {
    fn name(&self) -> &'static str {
        "workflow"
    }

    fn backfill(&self) -> bool {
        self.backfill
    }

    fn demand(&self, job: &JobSpec, phase: usize) -> Demand {
        let step = &job.phases[phase];
        let walltime = walltime_for(job, step);
        match step {
            Phase::Classical { .. } => Demand { nodes: job.total_nodes(), units: 0, walltime },
            Phase::Quantum { .. } => Demand { nodes: 0, units: job.total_qpu_gres(), walltime },
        }
    }

    fn last_phase_of_allocation(&self, _job: &JobSpec, start: usize, phase: usize) -> bool {
        start == phase
    }

    fn boundary(&self, _job: &JobSpec, _finished: usize, _held_nodes: u32) -> Boundary {
        Boundary::ReleaseAll
    }
}
