//! The conserved resource ledger of a running simulation.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{ClusterConfig, JobId, QpuAccess, ResourceId, Seconds};

/// Resources a queued request asks for. `units` are physical QPUs or VQPU
/// leases depending on the strategy's [`QpuAccess`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Demand {
    pub nodes: u32,
    pub units: u32,
    /// Walltime of the allocation, used as the runtime estimate for backfilling.
    pub walltime: Seconds,
}

impl Demand {
    pub fn uses_classical(&self) -> bool {
        self.nodes > 0
    }

    pub fn uses_quantum(&self) -> bool {
        self.units > 0
    }

    pub fn fits(&self, nodes: u32, units: u32) -> bool {
        self.nodes <= nodes && self.units <= units
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaitEntry {
    pub job: JobId,
    /// Phase the allocation starts at (always 0 unless allocating per step).
    pub phase: usize,
    pub ready: Seconds,
    pub demand: Demand,
}

#[derive(Clone, Debug)]
pub struct ClusterState {
    access: QpuAccess,
    total_nodes: u32,
    free_nodes: BTreeSet<u32>,
    node_owner: BTreeMap<JobId, BTreeSet<u32>>,
    /// Exclusive holder of each physical QPU.
    qpu_holder: Vec<Option<JobId>>,
    /// `leases[q][slot]`: job bound to that virtual QPU.
    leases: Vec<Vec<Option<JobId>>>,
    /// Job whose task is executing on each physical QPU.
    qpu_busy: Vec<Option<JobId>>,
    /// FCFS queue shared by both partitions; an entry waits in every
    /// partition its demand touches.
    pub wait_queue: Vec<WaitEntry>,
}

impl ClusterState {
    pub fn new(cluster: &ClusterConfig, access: QpuAccess) -> Self {
        let qpus = cluster.physical_qpus() as usize;
        Self {
            access,
            total_nodes: cluster.classical_nodes,
            free_nodes: (0..cluster.classical_nodes).collect(),
            node_owner: BTreeMap::new(),
            qpu_holder: vec![None; qpus],
            leases: vec![vec![None; cluster.vqpus_per_qpu as usize]; qpus],
            qpu_busy: vec![None; qpus],
            wait_queue: Vec::new(),
        }
    }

    pub fn access(&self) -> QpuAccess {
        self.access
    }

    pub fn qpu_count(&self) -> usize {
        self.qpu_busy.len()
    }

    pub fn free_node_count(&self) -> u32 {
        self.free_nodes.len() as u32
    }

    pub fn nodes_of(&self, job: JobId) -> u32 {
        self.node_owner.get(&job).map_or(0, |s| s.len() as u32)
    }

    pub fn free_unit_count(&self) -> u32 {
        match self.access {
            QpuAccess::Exclusive => self.qpu_holder.iter().filter(|h| h.is_none()).count() as u32,
            QpuAccess::Virtual => self.leases.iter().flatten().filter(|h| h.is_none()).count() as u32,
        }
    }

    /// Takes the `n` lowest-numbered free nodes.
    pub fn take_nodes(&mut self, job: JobId, n: u32) -> Vec<u32> {
        assert!(n <= self.free_node_count(), "granting {n} nodes with {} free", self.free_node_count());
        let taken: Vec<u32> = self.free_nodes.iter().take(n as usize).copied().collect();
        for id in &taken {
            self.free_nodes.remove(id);
        }
        self.node_owner.entry(job).or_default().extend(taken.iter().copied());
        taken
    }

    /// Returns the job's `n` highest-numbered nodes to the pool.
    pub fn release_nodes(&mut self, job: JobId, n: u32) -> Vec<u32> {
        let owned = self.node_owner.get_mut(&job).expect("job owns no nodes");
        assert!(n as usize <= owned.len());
        let released: Vec<u32> = owned.iter().rev().take(n as usize).copied().collect();
        for id in &released {
            owned.remove(id);
            self.free_nodes.insert(*id);
        }
        if owned.is_empty() {
            self.node_owner.remove(&job);
        }
        let mut released = released;
        released.sort_unstable();
        released
    }

    pub fn release_all_nodes(&mut self, job: JobId) -> Vec<u32> {
        let n = self.nodes_of(job);
        if n == 0 {
            return Vec::new();
        }
        self.release_nodes(job, n)
    }

    /// Takes `n` QPU units. Physical QPUs are taken lowest id first; leases
    /// come from the QPU with the most free slots (lowest id on ties).
    pub fn take_units(&mut self, job: JobId, n: u32) -> Vec<ResourceId> {
        assert!(n <= self.free_unit_count(), "granting {n} QPU units with {} free", self.free_unit_count());
        let mut out = Vec::with_capacity(n as usize);
        for _ in 0..n {
            match self.access {
                QpuAccess::Exclusive => {
                    let q = self.qpu_holder.iter().position(Option::is_none).unwrap();
                    self.qpu_holder[q] = Some(job);
                    out.push(ResourceId::Qpu(q as u32));
                }
                QpuAccess::Virtual => {
                    let free_in = |slots: &Vec<Option<JobId>>| slots.iter().filter(|s| s.is_none()).count();
                    let q = (0..self.leases.len())
                        .max_by(|&a, &b| free_in(&self.leases[a]).cmp(&free_in(&self.leases[b])).then(b.cmp(&a)))
                        .unwrap();
                    let slot = self.leases[q].iter().position(Option::is_none).unwrap();
                    self.leases[q][slot] = Some(job);
                    out.push(ResourceId::Vqpu { qpu: q as u32, slot: slot as u32 });
                }
            }
        }
        out
    }

    pub fn release_units(&mut self, job: JobId, units: &[ResourceId]) {
        for unit in units {
            let holder = match *unit {
                ResourceId::Qpu(q) => &mut self.qpu_holder[q as usize],
                ResourceId::Vqpu { qpu, slot } => &mut self.leases[qpu as usize][slot as usize],
                ResourceId::Node(_) => panic!("node passed as QPU unit"),
            };
            assert_eq!(*holder, Some(job), "{unit} not held by job {job}");
            *holder = None;
        }
    }

    pub fn qpu_idle(&self, q: usize) -> bool {
        self.qpu_busy[q].is_none()
    }

    pub fn start_task(&mut self, q: usize, job: JobId) {
        assert!(self.qpu_busy[q].is_none(), "QPU {q} already busy");
        self.qpu_busy[q] = Some(job);
    }

    pub fn end_task(&mut self, q: usize, job: JobId) {
        assert_eq!(self.qpu_busy[q], Some(job));
        self.qpu_busy[q] = None;
    }

    /// Checks the ledger's own invariants.
    pub fn check(&self) -> Result<(), String> {
        let owned: usize = self.node_owner.values().map(BTreeSet::len).sum();
        if owned + self.free_nodes.len() != self.total_nodes as usize {
            return Err(format!("node ledger: {owned} owned + {} free != {}", self.free_nodes.len(), self.total_nodes));
        }
        for (q, busy) in self.qpu_busy.iter().enumerate() {
            let Some(job) = busy else { continue };
            let holds = self.qpu_holder[q] == Some(*job) || self.leases[q].contains(&Some(*job));
            if !holds {
                return Err(format!("QPU {q} runs a task of job {job} which holds no unit on it"));
            }
        }
        Ok(())
    }
}
