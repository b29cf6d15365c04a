use super::AllocationStrategy;

/// Gang allocation of every hetjob component, held exclusively until the job
/// ends or the shortest component walltime expires.
#[derive(Clone, Copy, Debug, Default)]
pub struct Coschedule;

impl AllocationStrategy for Coschedule {
    fn name(&self) -> &'static str {
        "coschedule"
    }
}
