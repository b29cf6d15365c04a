//! Queue planning: strict per-partition FCFS, with optional EASY backfilling.

use crate::model::{JobId, Seconds};

use super::state::{Demand, WaitEntry};

#[derive(Clone, Debug, PartialEq)]
pub enum StrategyDecision {
    /// Start the allocation now; resources are guaranteed free.
    Grant { job: JobId, phase: usize, nodes: u32, units: u32 },
    /// Keep waiting.
    Defer { job: JobId, phase: usize },
    /// Release nodes at a classical to quantum boundary, keeping `keep`.
    ShrinkAck { job: JobId, keep: u32 },
    /// Give `nodes` more nodes to a shrunk job.
    ExpandGrant { job: JobId, nodes: u32 },
    /// Walltime expired.
    Kill { job: JobId },
}

/// An allocation currently holding resources.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunningAlloc {
    /// Walltime deadline, the latest instant the resources come back.
    pub deadline: Seconds,
    pub nodes: u32,
    pub units: u32,
}

#[derive(Clone, Copy, Debug)]
struct Reservation {
    classical: bool,
    quantum: bool,
    /// Time at which the blocked head is guaranteed to fit.
    shadow: Option<Seconds>,
    extra_nodes: u32,
    extra_units: u32,
}

impl Reservation {
    fn touches(&self, d: &Demand) -> bool {
        (self.classical && d.uses_classical()) || (self.quantum && d.uses_quantum())
    }

    fn ends_before_shadow(&self, d: &Demand, now: Seconds) -> bool {
        self.shadow.is_some_and(|s| now + d.walltime <= s)
    }

    fn fits_extra(&self, d: &Demand) -> bool {
        d.fits(self.extra_nodes, self.extra_units)
    }
}

fn reserve(head: &Demand, free: (u32, u32), running: &[RunningAlloc]) -> Reservation {
    let mut by_end: Vec<&RunningAlloc> = running.iter().collect();
    by_end.sort_by(|a, b| a.deadline.total_cmp(&b.deadline));
    let (mut nodes, mut units) = free;
    let mut shadow = None;
    for alloc in by_end {
        nodes += alloc.nodes;
        units += alloc.units;
        if head.fits(nodes, units) {
            shadow = Some(alloc.deadline);
            break;
        }
    }
    let (extra_nodes, extra_units) = match shadow {
        Some(_) => (nodes - head.nodes, units - head.units),
        None => (0, 0),
    };
    Reservation { classical: head.uses_classical(), quantum: head.uses_quantum(), shadow, extra_nodes, extra_units }
}

/// Decides which queued requests start now.
///
/// Without backfilling, a request that cannot start blocks every partition
/// it uses, and later requests touching those partitions wait behind it.
/// With backfilling, the first blocked request per partition gets a
/// reservation, and later requests may start if they fit now and either end
/// (by walltime) before the reservation or only use resources the
/// reservation leaves spare.
pub fn plan(
    queue: &[WaitEntry],
    free_nodes: u32,
    free_units: u32,
    running: &[RunningAlloc],
    now: Seconds,
    backfill: bool,
) -> Vec<StrategyDecision> {
    let mut decisions = Vec::with_capacity(queue.len());
    let (mut nodes, mut units) = (free_nodes, free_units);
    let mut running: Vec<RunningAlloc> = running.to_vec();
    let (mut blocked_classical, mut blocked_quantum) = (false, false);
    let mut reservations: Vec<Reservation> = Vec::new();

    for entry in queue {
        let d = entry.demand;
        let grant = if !backfill {
            let blocked = (blocked_classical && d.uses_classical()) || (blocked_quantum && d.uses_quantum());
            let ok = !blocked && d.fits(nodes, units);
            if !ok {
                blocked_classical |= d.uses_classical();
                blocked_quantum |= d.uses_quantum();
            }
            ok
        } else {
            let permitted = reservations
                .iter()
                .filter(|r| r.touches(&d))
                .all(|r| r.ends_before_shadow(&d, now) || r.fits_extra(&d));
            if d.fits(nodes, units) && permitted {
                for r in reservations.iter_mut().filter(|r| r.touches(&d)) {
                    if !r.ends_before_shadow(&d, now) {
                        r.extra_nodes -= d.nodes;
                        r.extra_units -= d.units;
                    }
                }
                true
            } else {
                let unreserved = (d.uses_classical() && !reservations.iter().any(|r| r.classical))
                    || (d.uses_quantum() && !reservations.iter().any(|r| r.quantum));
                if unreserved && !d.fits(nodes, units) {
                    reservations.push(reserve(&d, (nodes, units), &running));
                }
                false
            }
        };
        if grant {
            nodes -= d.nodes;
            units -= d.units;
            running.push(RunningAlloc { deadline: now + d.walltime, nodes: d.nodes, units: d.units });
            decisions.push(StrategyDecision::Grant {
                job: entry.job,
                phase: entry.phase,
                nodes: d.nodes,
                units: d.units,
            });
        } else {
            decisions.push(StrategyDecision::Defer { job: entry.job, phase: entry.phase });
        }
    }
    decisions
}
