use crate::model::JobSpec;

use super::{is_classical, AllocationStrategy, Boundary};

/// Holds the full allocation while classical work runs, drops to `retain`
/// nodes for quantum phases, and grows back when classical work resumes.
#[derive(Clone, Copy, Debug)]
pub struct Malleable {
    pub retain: u32,
    pub backfill: bool,
}

impl AllocationStrategy for Malleable {
    fn name(&self) -> &'static str {
        "malleable"
    }

    fn backfill(&self) -> bool {
        self.backfill
    }

    fn boundary(&self, job: &JobSpec, finished: usize, held_nodes: u32) -> Boundary {
        let next = &job.phases[finished + 1];
        if is_classical(&job.phases[finished]) && !is_classical(next) && held_nodes > self.retain {
            Boundary::Shrink { keep: self.retain }
        } else {
            Boundary::Continue
        }
    }

    fn expansion_target(&self, job: &JobSpec, phase: usize) -> Option<u32> {
        is_classical(&job.phases[phase]).then(|| job.total_nodes())
    }
}
