//! Discrete-event simulation of hybrid classical/quantum clusters.
//!
//! A workload of hybrid jobs ([`JobSpec`]) runs on a [`ClusterConfig`] under
//! one [`Strategy`]; the resulting [`Trace`] is turned into utilization and
//! wait metrics by [`analyze`].
//!
//! ```
//! use hybridsched_core::{analyze, paper_scenario, simulate, Strategy};
//!
//! let (cluster, jobs) = paper_scenario("superconducting").unwrap();
//! let trace = simulate(&cluster, &jobs, &Strategy::Coschedule, 0).unwrap();
//! let report = analyze(&trace, &cluster).unwrap();
//! assert!((report.qpu_alloc_utilization - 1.0 / 6.0).abs() < 1e-12);
//! ```

pub mod engine;
pub mod hetjob;
pub mod metrics;
pub mod model;
pub mod strategy;
pub mod workload;

pub use engine::{EventQueue, Handler, HandlerFault, Trace};
pub use hetjob::{parse_hetjob, HetjobScript, ParseError, ParseErrors};
pub use metrics::verify::{check_conservation, Violation};
pub use metrics::{analyze, compare, ComparisonTable, Imbalance, MetricsError, MetricsReport, SummaryRecord};
pub use model::{
    ClusterConfig, EventKind, JobId, JobSpec, Partition, Phase, QpuAccess, QpuPool, QpuTechnologyProfile, ResourceId,
    ResourceRequest, Seconds, SimEvent, TaskDuration, ValidationError,
};
pub use strategy::{simulate, simulate_with, AllocationStrategy, SimError, Strategy};
pub use workload::{contended_scenario, generate, paper_scenario, WorkloadError, WorkloadProfile};
