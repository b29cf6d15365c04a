//! Fixtures shared by the benchmarks.

use hybridsched_core::workload::{Arrival, CountDist, PhaseTemplate, ValueDist};
use hybridsched_core::{generate, ClusterConfig, JobSpec, QpuPool, QpuTechnologyProfile, WorkloadProfile};

/// A cluster of `nodes` classical nodes and `qpus` superconducting QPUs
/// with `jobs` three-phase hybrid jobs arriving over time.
pub fn synthetic(nodes: u32, qpus: u32, jobs: u32, seed: u64) -> (ClusterConfig, Vec<JobSpec>) {
    let cluster = ClusterConfig {
        classical_nodes: nodes,
        qpus: vec![QpuPool { profile: QpuTechnologyProfile::superconducting(), count: qpus }],
        vqpus_per_qpu: 1,
    };
    let profile = WorkloadProfile {
        job_count: jobs,
        arrival: Arrival::Poisson { rate_per_hour: 30.0 },
        phase_pattern: vec![
            PhaseTemplate::Classical { work: ValueDist::Uniform { min: 1000.0, max: 40000.0 } },
            PhaseTemplate::Quantum { tasks: CountDist::Uniform { min: 5, max: 50 }, prep_time: ValueDist::Fixed(20.0) },
            PhaseTemplate::Classical { work: ValueDist::Fixed(8000.0) },
        ],
        nodes: CountDist::Uniform { min: 1, max: nodes.min(16) },
        qpu_gres: 1,
        walltime: 6.0 * 3600.0,
        technology: "superconducting".into(),
        seed,
    };
    let jobs = generate(&profile).expect("benchmark profile is valid");
    (cluster, jobs)
}
