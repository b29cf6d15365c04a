//! Random cases and a brute-force metrics oracle shared by the test suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hybridsched_core::metrics::{JobMetrics, MetricsReport, QpuMetrics};
use hybridsched_core::model::TaskDuration;
use hybridsched_core::workload::{Arrival, CountDist, PhaseTemplate, ValueDist};
use hybridsched_core::{
    generate, ClusterConfig, EventKind, JobId, JobSpec, Partition, Phase, QpuPool, QpuTechnologyProfile, ResourceId,
    ResourceRequest, Strategy, Trace, WorkloadProfile,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Case {
    pub cluster: ClusterConfig,
    pub jobs: Vec<JobSpec>,
}

fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    rng.next_u64() % n
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[below(rng, xs.len() as u64) as usize]
}

fn profile_for(rng: &mut ChaCha8Rng) -> QpuTechnologyProfile {
    match below(rng, 4) {
        0 => QpuTechnologyProfile::superconducting(),
        1 => QpuTechnologyProfile::neutral_atoms(),
        2 => QpuTechnologyProfile::trapped_ion_placeholder(),
        _ => QpuTechnologyProfile {
            name: "superconducting".into(),
            task_duration: TaskDuration::Uniform { min: 2.0, max: 40.0 },
            calibration_overhead: 1.5,
        },
    }
}

fn random_pattern(rng: &mut ChaCha8Rng, len: usize) -> Vec<PhaseTemplate> {
    let mut quantum = below(rng, 2) == 0;
    (0..len)
        .map(|_| {
            quantum = !quantum;
            if quantum {
                PhaseTemplate::Quantum {
                    tasks: CountDist::Uniform { min: 1, max: 4 },
                    prep_time: pick(
                        rng,
                        &[ValueDist::Fixed(0.0), ValueDist::Fixed(30.0), ValueDist::Uniform { min: 0.0, max: 90.0 }],
                    ),
                }
            } else {
                PhaseTemplate::Classical { work: ValueDist::Uniform { min: 50.0, max: 20000.0 } }
            }
        })
        .collect()
}

/// Mixed hybrid workload on a small cluster. Some walltimes are short
/// enough that jobs get killed.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = 2 + below(&mut rng, 14) as u32;
    let qpus = 1 + below(&mut rng, 2) as u32;
    let profile = profile_for(&mut rng);
    let cluster = ClusterConfig::homogeneous(nodes, profile.clone(), qpus);
    let len = 1 + below(&mut rng, 4) as usize;
    let wp = WorkloadProfile {
        job_count: 1 + below(&mut rng, 10) as u32,
        arrival: if below(&mut rng, 3) == 0 {
            Arrival::AllAtZero
        } else {
            Arrival::Poisson { rate_per_hour: pick(&mut rng, &[2.0, 6.0, 20.0, 60.0]) }
        },
        phase_pattern: random_pattern(&mut rng, len),
        nodes: CountDist::Uniform { min: 1, max: nodes },
        qpu_gres: 1 + below(&mut rng, u64::from(qpus)) as u32,
        walltime: pick(&mut rng, &[900.0, 3600.0, 36000.0, 360000.0]),
        technology: profile.name.clone(),
        seed: rng.next_u64(),
    };
    Case { jobs: generate(&wp).expect("valid profile"), cluster }
}

/// Jobs with exactly one phase whose requests cover only that phase's
/// partition.
pub fn single_phase_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = 2 + below(&mut rng, 10) as u32;
    let qpus = 1 + below(&mut rng, 2) as u32;
    let cluster = ClusterConfig::homogeneous(nodes, profile_for(&mut rng), qpus);
    let count = 1 + below(&mut rng, 12);
    let mut submit = 0.0;
    let jobs = (1..=count)
        .map(|id| {
            submit += below(&mut rng, 4) as f64 * 450.0;
            let walltime = pick(&mut rng, &[600.0, 7200.0, 72000.0]);
            let (request, phase) = if below(&mut rng, 2) == 0 {
                let n = 1 + below(&mut rng, u64::from(nodes)) as u32;
                (
                    ResourceRequest {
                        component_id: 0,
                        partition: Partition::Classical,
                        nodes: n,
                        qpu_gres: 0,
                        walltime,
                    },
                    Phase::Classical { work: 100.0 + below(&mut rng, 20000) as f64 },
                )
            } else {
                let g = 1 + below(&mut rng, u64::from(qpus)) as u32;
                (
                    ResourceRequest { component_id: 0, partition: Partition::Quantum, nodes: 0, qpu_gres: g, walltime },
                    Phase::Quantum {
                        tasks: 1 + below(&mut rng, 5) as u32,
                        prep_time_per_task: below(&mut rng, 60) as f64,
                    },
                )
            };
            JobSpec { job_id: JobId(id), submit_time: submit, requests: vec![request], phases: vec![phase] }
        })
        .collect();
    Case { cluster, jobs }
}

/// Hybrid jobs on a cluster whose QPUs all run fixed `d`-second tasks.
pub fn fixed_duration_case(seed: u64, d: f64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = 4 + below(&mut rng, 12) as u32;
    let qpus = 1 + below(&mut rng, 2) as u32;
    let profile = QpuTechnologyProfile {
        name: "fixed".into(),
        task_duration: TaskDuration::Fixed { seconds: d },
        calibration_overhead: 0.0,
    };
    let cluster =
        ClusterConfig { classical_nodes: nodes, qpus: vec![QpuPool { profile, count: qpus }], vqpus_per_qpu: 1 };
    let len = 1 + below(&mut rng, 4) as usize;
    let wp = WorkloadProfile {
        job_count: 2 + below(&mut rng, 10) as u32,
        arrival: if below(&mut rng, 2) == 0 { Arrival::AllAtZero } else { Arrival::Poisson { rate_per_hour: 30.0 } },
        phase_pattern: random_pattern(&mut rng, len),
        nodes: CountDist::Uniform { min: 1, max: nodes / 2 },
        qpu_gres: 1,
        walltime: 360000.0,
        technology: "fixed".into(),
        seed: rng.next_u64(),
    };
    Case { jobs: generate(&wp).expect("valid profile"), cluster }
}

pub fn random_strategy(seed: u64) -> Strategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    match below(&mut rng, 6) {
        0 => Strategy::Coschedule,
        1 => Strategy::Workflow { backfill: false },
        2 => Strategy::Workflow { backfill: true },
        3 => Strategy::Vqpu { k: 1 + below(&mut rng, 4) as u32 },
        4 => Strategy::Malleable { retain: 1 + below(&mut rng, 3) as u32, backfill: false },
        _ => Strategy::Malleable { retain: 1, backfill: true },
    }
}

// ---------------------------------------------------------------------------
// Oracle: per-resource interval scans in exact rational arithmetic.

type Q = BigRational;

fn q(t: f64) -> Q {
    BigRational::from_float(t).expect("finite time")
}

fn f(x: &Q) -> f64 {
    x.to_f64().expect("representable")
}

fn div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Length of the union-free intersection of two sorted interval lists.
fn overlap(a: &[(Q, Q)], b: &[(Q, Q)]) -> Q {
    let mut total = Q::zero();
    for (a0, a1) in a {
        for (b0, b1) in b {
            let lo = if a0 > b0 { a0 } else { b0 };
            let hi = if a1 < b1 { a1 } else { b1 };
            if lo < hi {
                total += hi - lo;
            }
        }
    }
    total
}

fn length(xs: &[(Q, Q)]) -> Q {
    xs.iter().fold(Q::zero(), |acc, (a, b)| acc + (b - a))
}

/// Intervals during which `job` computes on its nodes.
fn busy_intervals(trace: &Trace, job: JobId) -> Vec<(Q, Q)> {
    let mut out = Vec::new();
    let (mut in_phase, mut outstanding) = (false, false);
    let mut since = Q::zero();
    for e in trace.events.iter().filter(|e| e.job_id == Some(job)) {
        let was = in_phase && !outstanding;
        match e.kind {
            EventKind::PhaseStart => in_phase = true,
            EventKind::PhaseEnd | EventKind::JobEnd => {
                in_phase = false;
                outstanding = false;
            }
            EventKind::QTaskEnqueue => outstanding = true,
            EventKind::QTaskEnd => outstanding = false,
            _ => {}
        }
        let now = in_phase && !outstanding;
        if !was && now {
            since = q(e.time);
        } else if was && !now {
            out.push((since.clone(), q(e.time)));
        }
    }
    out
}

fn holding_intervals(trace: &Trace, matches: impl Fn(&ResourceId) -> bool) -> Vec<(JobId, Q, Q)> {
    let mut open: BTreeMap<(JobId, ResourceId), Q> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &trace.events {
        let Some(job) = e.job_id else { continue };
        for r in e.resources.iter().filter(|r| matches(r)) {
            match e.kind {
                EventKind::AllocGrant | EventKind::Expand => {
                    open.insert((job, *r), q(e.time));
                }
                EventKind::AllocRelease | EventKind::Shrink => {
                    let start = open.remove(&(job, *r)).expect("release of held resource");
                    out.push((job, start, q(e.time)));
                }
                _ => {}
            }
        }
    }
    out
}

/// Recomputes every field of the metrics report without sharing code with
/// the streaming analyzer.
pub fn oracle(trace: &Trace, cluster: &ClusterConfig) -> MetricsReport {
    let first = trace.events.first().expect("non-empty").time;
    let last = trace.events.last().unwrap().time;
    let window = last - first;
    let jobs: BTreeSet<JobId> = trace.events.iter().filter_map(|e| e.job_id).collect();
    let busy: BTreeMap<JobId, Vec<(Q, Q)>> = jobs.iter().map(|&j| (j, busy_intervals(trace, j))).collect();

    let mut node_alloc = Q::zero();
    let mut node_busy = Q::zero();
    for n in 0..cluster.classical_nodes {
        for (job, a, b) in holding_intervals(trace, |r| *r == ResourceId::Node(n)) {
            node_busy += overlap(&[(a.clone(), b.clone())], &busy[&job]);
            node_alloc += b - a;
        }
    }

    let mut qpus = Vec::new();
    let (mut all_busy, mut all_alloc) = (Q::zero(), Q::zero());
    for qpu in 0..cluster.physical_qpus() {
        let mut running = Vec::new();
        let mut start = None;
        for e in &trace.events {
            if !e.resources.iter().any(|r| r.physical_qpu() == Some(qpu)) {
                continue;
            }
            match e.kind {
                EventKind::QTaskStart => start = Some(q(e.time)),
                EventKind::QTaskEnd => running.push((start.take().unwrap(), q(e.time))),
                _ => {}
            }
        }
        // Allocated: union of all holdings, found by sweeping sorted endpoints.
        let holds = holding_intervals(trace, |r| r.physical_qpu() == Some(qpu));
        let mut points: Vec<(Q, i32)> = Vec::new();
        for (_, a, b) in holds {
            points.push((a, 1));
            points.push((b, -1));
        }
        points.sort_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)));
        let mut depth = 0;
        let mut opened = Q::zero();
        let mut allocated = Q::zero();
        for (t, d) in points {
            if depth == 0 && d == 1 {
                opened = t.clone();
            }
            depth += d;
            if depth == 0 {
                allocated += t - &opened;
            }
        }
        let b = length(&running);
        all_busy += &b;
        all_alloc += &allocated;
        let (b, a) = (f(&b), f(&allocated));
        qpus.push(QpuMetrics { qpu, busy: b, allocated: a, utilization: div(b, window), alloc_utilization: div(b, a) });
    }

    let mut job_metrics = Vec::new();
    let mut waits: Vec<Q> = Vec::new();
    let mut task_waits: Vec<Q> = Vec::new();
    for &job in &jobs {
        let events: Vec<_> = trace.events.iter().filter(|e| e.job_id == Some(job)).collect();
        let submit = events[0].time;
        let end = events.last().unwrap().time;
        let mut held = 0i64;
        let mut since = Some(q(submit));
        let mut job_wait = Q::zero();
        let mut start = None;
        let mut allocations = 0;
        let mut enqueued = None;
        for e in &events {
            let n = e.resources.len() as i64;
            match e.kind {
                EventKind::AllocGrant => {
                    let w = q(e.time) - since.take().unwrap();
                    job_wait += &w;
                    waits.push(w);
                    start.get_or_insert(e.time);
                    allocations += 1;
                    held += n;
                }
                EventKind::Expand => held += n,
                EventKind::Shrink => held -= n,
                EventKind::AllocRelease => {
                    held -= n;
                    if held == 0 {
                        since = Some(q(e.time));
                    }
                }
                EventKind::QTaskEnqueue => enqueued = Some(q(e.time)),
                EventKind::QTaskStart => task_waits.push(q(e.time) - enqueued.take().unwrap()),
                _ => {}
            }
        }
        job_metrics.push(JobMetrics {
            job_id: job,
            submit_time: submit,
            start_time: start.unwrap_or(end),
            end_time: end,
            turnaround: end - submit,
            queue_wait: f(&job_wait),
            allocations,
            killed: events.iter().any(|e| e.kind == EventKind::WalltimeKill),
        });
    }
    let mean =
        |xs: &[Q]| if xs.is_empty() { 0.0 } else { div(f(&xs.iter().fold(Q::zero(), |a, b| a + b)), xs.len() as f64) };
    let max = |xs: &[Q]| xs.iter().map(f).fold(0.0, f64::max);
    let idle = &node_alloc - &node_busy;
    let (nb, na, ni) = (f(&node_busy), f(&node_alloc), f(&idle));
    MetricsReport {
        first_submit: first,
        last_event: last,
        makespan: window,
        qpu_utilization: div(f(&all_busy), f64::from(cluster.physical_qpus()) * window),
        qpu_alloc_utilization: div(f(&all_busy), f(&all_alloc)),
        qpus,
        node_busy: nb,
        node_allocated: na,
        node_utilization: div(nb, f64::from(cluster.classical_nodes) * window),
        node_idle_allocated: ni,
        node_alloc_idle_fraction: div(ni, na),
        mean_wait: mean(&waits),
        max_wait: max(&waits),
        mean_task_wait: mean(&task_waits),
        max_task_wait: max(&task_waits),
        killed_jobs: job_metrics.iter().filter(|j| j.killed).count() as u32,
        jobs: job_metrics,
    }
}

/// Classical node-seconds delivered to each (job, phase) of a trace.
pub fn delivered_work(trace: &Trace) -> BTreeMap<(JobId, usize), f64> {
    let mut out = BTreeMap::new();
    let mut held: BTreeMap<JobId, i64> = BTreeMap::new();
    let mut open: BTreeMap<JobId, (usize, f64, Q)> = BTreeMap::new();
    let credit = |open: &mut BTreeMap<JobId, (usize, f64, Q)>, job: JobId, t: f64, nodes: i64| {
        if let Some((_, since, acc)) = open.get_mut(&job) {
            *acc += (q(t) - q(*since)) * Q::from_integer(BigInt::from(nodes));
            *since = t;
        }
    };
    for e in &trace.events {
        let Some(job) = e.job_id else { continue };
        let nodes = e.resources.iter().filter(|r| matches!(r, ResourceId::Node(_))).count() as i64;
        let h = *held.get(&job).unwrap_or(&0);
        match e.kind {
            EventKind::AllocGrant | EventKind::Expand => {
                credit(&mut open, job, e.time, h);
                held.insert(job, h + nodes);
            }
            EventKind::AllocRelease | EventKind::Shrink => {
                credit(&mut open, job, e.time, h);
                held.insert(job, h - nodes);
            }
            EventKind::PhaseStart => {
                open.insert(job, (e.phase_index.unwrap(), e.time, Q::zero()));
            }
            EventKind::PhaseEnd => {
                credit(&mut open, job, e.time, h);
                let (phase, _, acc) = open.remove(&job).unwrap();
                out.insert((job, phase), f(&acc));
            }
            _ => {}
        }
    }
    out
}
