//! Replays a trace against the cluster and reports every conservation
//! violation: double-allocated nodes or QPU units, releases of resources not
//! held, tasks on QPUs the job does not hold, and overlapping QPU tasks.

use std::collections::BTreeMap;

use crate::engine::Trace;
use crate::model::{ClusterConfig, EventKind, JobId, ResourceId};

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub time: f64,
    pub message: String,
}

/// `cluster.vqpus_per_qpu` bounds the slot index of virtual QPU leases.
pub fn check_conservation(trace: &Trace, cluster: &ClusterConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut holder: BTreeMap<ResourceId, JobId> = BTreeMap::new();
    let mut running: BTreeMap<u32, JobId> = BTreeMap::new();
    let qpus = cluster.physical_qpus();
    for (index, e) in trace.events.iter().enumerate() {
        let mut flag = |message: String| out.push(Violation { index, time: e.time, message });
        let Some(job) = e.job_id else { continue };
        for r in &e.resources {
            let in_range = match *r {
                ResourceId::Node(n) => n < cluster.classical_nodes,
                ResourceId::Qpu(q) => q < qpus,
                ResourceId::Vqpu { qpu, slot } => qpu < qpus && slot < cluster.vqpus_per_qpu,
            };
            if !in_range {
                flag(format!("{r} does not exist"));
            }
        }
        match e.kind {
            EventKind::AllocGrant | EventKind::Expand => {
                for r in &e.resources {
                    let exclusive_clash = match *r {
                        ResourceId::Qpu(q) => {
                            holder.keys().any(|h| matches!(*h, ResourceId::Vqpu { qpu, .. } if qpu == q))
                        }
                        ResourceId::Vqpu { qpu, .. } => holder.contains_key(&ResourceId::Qpu(qpu)),
                        ResourceId::Node(_) => false,
                    };
                    if let Some(other) = holder.insert(*r, job) {
                        flag(format!("{r} granted to job {job} while held by job {other}"));
                    } else if exclusive_clash {
                        flag(format!("{r} granted to job {job} while its QPU is shared"));
                    }
                }
            }
            EventKind::AllocRelease | EventKind::Shrink => {
                for r in &e.resources {
                    match holder.remove(r) {
                        Some(h) if h == job => {}
                        Some(h) => {
                            flag(format!("job {job} released {r} held by job {h}"));
                        }
                        None => flag(format!("job {job} released {r} which was free")),
                    }
                }
            }
            EventKind::QTaskStart | EventKind::QTaskEnd => {
                for r in &e.resources {
                    let Some(q) = r.physical_qpu() else {
                        flag(format!("{} names non-QPU resource {r}", e.kind));
                        continue;
                    };
                    if e.kind == EventKind::QTaskStart {
                        let holds = holder.iter().any(|(h, j)| *j == job && h.physical_qpu() == Some(q));
                        if !holds {
                            flag(format!("job {job} runs a task on QPU {q} without holding it"));
                        }
                        if let Some(other) = running.insert(q, job) {
                            flag(format!("QPU {q} starts a task of job {job} while running job {other}"));
                        }
                    } else if running.remove(&q) != Some(job) {
                        flag(format!("QPU {q} ends a task of job {job} that was not running"));
                    }
                }
            }
            _ => {}
        }
    }
    if !holder.is_empty() {
        let time = trace.events.last().map_or(0.0, |e| e.time);
        out.push(Violation {
            index: trace.events.len(),
            time,
            message: format!("{} resources still held at the end", holder.len()),
        });
    }
    out
}
