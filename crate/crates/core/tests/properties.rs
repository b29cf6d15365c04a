mod support;

use hybridsched_core::hetjob::render_hetjob;
use hybridsched_core::{
    analyze, check_conservation, parse_hetjob, simulate, EventKind, JobId, Partition, Phase, ResourceRequest, Strategy,
    Trace,
};
use proptest::prelude::*;
use support::{fixed_duration_case, oracle, random_case, random_strategy, single_phase_case};

fn summary_eq(a: &Trace, b: &Trace, cluster: &hybridsched_core::ClusterConfig) -> Result<(), TestCaseError> {
    let ra = analyze(a, cluster).unwrap();
    let rb = analyze(b, cluster).unwrap();
    prop_assert_eq!(ra.summary(""), rb.summary(""));
    prop_assert_eq!(ra, rb);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn vqpu_wait_is_bounded_by_the_lease_count(seed in any::<u64>(), k in 1u32..=4, d in prop::sample::select(vec![5.0, 10.0, 60.0])) {
        let case = fixed_duration_case(seed, d);
        let trace = simulate(&case.cluster, &case.jobs, &Strategy::Vqpu { k }, seed).unwrap();
        let mut enqueued = std::collections::BTreeMap::new();
        for e in &trace.events {
            match e.kind {
                EventKind::QTaskEnqueue => { enqueued.insert(e.job_id, e.time); }
                EventKind::QTaskStart => {
                    let wait = e.time - enqueued[&e.job_id];
                    let bound = f64::from(k - 1) * d;
                    prop_assert!(wait <= bound + 1e-9 * e.time.max(1.0), "wait {wait} > {bound}");
                }
                _ => {}
            }
        }
    }

    #[test]
    fn one_lease_per_qpu_is_coscheduling(seed in any::<u64>()) {
        let case = random_case(seed);
        let a = simulate(&case.cluster, &case.jobs, &Strategy::Coschedule, seed).unwrap();
        let b = simulate(&case.cluster, &case.jobs, &Strategy::Vqpu { k: 1 }, seed).unwrap();
        summary_eq(&a, &b, &case.cluster)?;
    }

    #[test]
    fn retaining_all_nodes_is_coscheduling(seed in any::<u64>()) {
        let case = random_case(seed);
        let retain = case.cluster.classical_nodes;
        let a = simulate(&case.cluster, &case.jobs, &Strategy::Coschedule, seed).unwrap();
        let b = simulate(&case.cluster, &case.jobs, &Strategy::Malleable { retain, backfill: false }, seed).unwrap();
        prop_assert_eq!(&a.events, &b.events);
    }

    #[test]
    fn single_phase_workflow_is_coscheduling(seed in any::<u64>()) {
        let case = single_phase_case(seed);
        let a = simulate(&case.cluster, &case.jobs, &Strategy::Coschedule, seed).unwrap();
        let b = simulate(&case.cluster, &case.jobs, &Strategy::Workflow { backfill: false }, seed).unwrap();
        summary_eq(&a, &b, &case.cluster)?;
    }

    #[test]
    fn streaming_metrics_match_the_oracle(seed in any::<u64>()) {
        let case = random_case(seed);
        let strategy = random_strategy(seed);
        let trace = simulate(&case.cluster, &case.jobs, &strategy, seed).unwrap();
        let report = analyze(&trace, &case.cluster).unwrap();
        prop_assert_eq!(report, oracle(&trace, &case.cluster));
    }

    #[test]
    fn resources_are_conserved(seed in any::<u64>()) {
        let case = random_case(seed);
        let strategy = random_strategy(seed);
        let trace = simulate(&case.cluster, &case.jobs, &strategy, seed).unwrap();
        let violations = check_conservation(&trace, &strategy.cluster_for(&case.cluster));
        prop_assert!(violations.is_empty(), "{:?}", violations);
        let report = analyze(&trace, &case.cluster).unwrap();
        prop_assert!(report.node_busy <= report.node_allocated);
        for q in &report.qpus {
            prop_assert!(q.busy <= q.allocated && q.allocated <= report.makespan);
        }
        for x in [report.qpu_utilization, report.qpu_alloc_utilization, report.node_utilization, report.node_alloc_idle_fraction] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>()) {
        let case = random_case(seed);
        let strategy = random_strategy(seed);
        let a = simulate(&case.cluster, &case.jobs, &strategy, seed).unwrap();
        let b = simulate(&case.cluster, &case.jobs, &strategy, seed).unwrap();
        prop_assert_eq!(a.dump(), b.dump());
    }

    #[test]
    fn classical_work_is_delivered_exactly(seed in any::<u64>()) {
        let case = random_case(seed);
        let strategy = random_strategy(seed);
        let trace = simulate(&case.cluster, &case.jobs, &strategy, seed).unwrap();
        for ((job, phase), delivered) in support::delivered_work(&trace) {
            let spec = case.jobs.iter().find(|j| j.job_id == job).unwrap();
            if let Phase::Classical { work } = spec.phases[phase] {
                prop_assert!((delivered - work).abs() <= 1e-9 * work, "job {job} phase {phase}: {delivered} vs {work}");
            }
        }
    }

    #[test]
    fn trace_dump_round_trips(seed in any::<u64>()) {
        let case = random_case(seed);
        let trace = simulate(&case.cluster, &case.jobs, &random_strategy(seed), seed).unwrap();
        let parsed = Trace::parse_dump(&trace.dump()).unwrap();
        prop_assert_eq!(parsed.events, trace.events);
    }

    #[test]
    fn rendered_scripts_parse_back(comps in prop::collection::vec((any::<bool>(), 1u32..64, 1u32..400_000), 1..4)) {
        let requests: Vec<ResourceRequest> = comps
            .iter()
            .enumerate()
            .map(|(i, &(classical, n, secs))| ResourceRequest {
                component_id: i,
                partition: if classical { Partition::Classical } else { Partition::Quantum },
                nodes: if classical { n } else { 0 },
                qpu_gres: if classical { 0 } else { n },
                walltime: f64::from(secs),
            })
            .collect();
        let script = render_hetjob(&requests, "srun ./app");
        let parsed = parse_hetjob(&script).unwrap();
        prop_assert_eq!(parsed.requests, requests);
        prop_assert_eq!(parsed.payload, "srun ./app");
    }
}

#[test]
fn random_cases_exercise_kills_and_every_strategy() {
    let mut killed = 0;
    let mut names = std::collections::BTreeSet::new();
    for seed in 0..200 {
        let case = random_case(seed);
        let strategy = random_strategy(seed);
        names.insert(strategy.name());
        let trace = simulate(&case.cluster, &case.jobs, &strategy, seed).unwrap();
        killed += analyze(&trace, &case.cluster).unwrap().killed_jobs;
        assert!(trace.events.iter().any(|e| e.job_id == Some(JobId(1))));
    }
    assert!(killed > 0);
    assert_eq!(names.len(), 4);
}
