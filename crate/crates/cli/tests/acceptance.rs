//! Acceptance run: one PASS/FAIL line per criterion, printed even under
//! output capture. Run alone with
//! `cargo test -p hybridsched-cli --test acceptance -- --nocapture`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hybridsched_core::hetjob::ParseErrorKind;
use hybridsched_core::metrics::{write_jobs_csv, write_summary_csv};
use hybridsched_core::workload::LISTING_1;
use hybridsched_core::{
    analyze, check_conservation, contended_scenario, paper_scenario, parse_hetjob, simulate, EventKind, Partition,
    ResourceRequest, Strategy,
};
use serde_json::Value;
use support::{fixed_duration_case, oracle, random_case, random_strategy, single_phase_case};

type Outcome = Result<String, String>;
type Expected = Vec<(ParseErrorKind, usize)>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn paper_json(tech: &str) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hybridsched"))
        .args(["paper-scenario", tech, "--format", "json"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))?;
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn coschedule_row(v: &Value) -> Result<&Value, String> {
    let row = &v["single"]["rows"][0];
    ensure(row["strategy"] == "coschedule", || format!("first row is {}", row["strategy"]))?;
    Ok(row)
}

fn rel_close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-9 * want.abs()
}

fn c1_superconducting_headline() -> Outcome {
    // 60 tasks of 10 s on a QPU held for the 1 h walltime.
    let want = (60.0 * 10.0) / 3600.0;
    let v = paper_json("superconducting")?;
    let got = coschedule_row(&v)?["qpu_alloc_utilization"].as_f64().ok_or("missing field")?;
    ensure(rel_close(got, want), || format!("qpu busy/allocated {got}, expected {want}"))?;
    Ok(format!("coschedule QPU busy/allocated = {got:.6}"))
}

fn c2_neutral_atoms_headline() -> Outcome {
    // 10 nodes sit idle through one 1800 s task of a 3600 s allocation.
    let want = (10.0 * 1800.0) / (10.0 * 3600.0);
    let v = paper_json("neutral-atoms")?;
    let got = coschedule_row(&v)?["node_alloc_idle_fraction"].as_f64().ok_or("missing field")?;
    ensure((got - want).abs() <= 1e-9, || format!("allocated-idle fraction {got}, expected {want}"))?;
    Ok(format!("coschedule allocated-idle node fraction = {got:.6}"))
}

fn c3_vqpu_wait_bound() -> Outcome {
    let d = 10.0;
    let (mut runs, mut tasks, mut violations) = (0, 0, Vec::new());
    for seed in 0..100u64 {
        let case = fixed_duration_case(seed, d);
        for k in 1..=4u32 {
            let trace = simulate(&case.cluster, &case.jobs, &Strategy::Vqpu { k }, seed).map_err(|e| e.to_string())?;
            runs += 1;
            let mut enqueued = BTreeMap::new();
            for e in &trace.events {
                match e.kind {
                    EventKind::QTaskEnqueue => {
                        enqueued.insert(e.job_id, e.time);
                    }
                    EventKind::QTaskStart => {
                        tasks += 1;
                        let wait = e.time - enqueued[&e.job_id];
                        if wait > f64::from(k - 1) * d + 1e-9 * e.time.max(1.0) {
                            violations.push(format!("seed {seed} k {k} job {:?}: wait {wait}", e.job_id));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    ensure(tasks > 0, || "no quantum tasks ran".into())?;
    Ok(format!("{runs} runs, {tasks} tasks, 0 violations"))
}

fn c4_degeneracies() -> Outcome {
    for seed in 0..50u64 {
        let case = random_case(seed);
        let report = |s: &Strategy, case: &support::Case| {
            let trace = simulate(&case.cluster, &case.jobs, s, seed).map_err(|e| e.to_string())?;
            analyze(&trace, &case.cluster).map_err(|e| e.to_string())
        };
        let base = report(&Strategy::Coschedule, &case)?;
        let vqpu = report(&Strategy::Vqpu { k: 1 }, &case)?;
        ensure(vqpu.summary("") == base.summary("") && vqpu == base, || format!("vqpu(K=1) differs on seed {seed}"))?;
        let retain = case.cluster.classical_nodes;
        let mall = report(&Strategy::Malleable { retain, backfill: false }, &case)?;
        ensure(mall.summary("") == base.summary("") && mall == base, || {
            format!("malleable(retain=nodes) differs on seed {seed}")
        })?;
        let single = single_phase_case(seed);
        let base = report(&Strategy::Coschedule, &single)?;
        let wf = report(&Strategy::Workflow { backfill: false }, &single)?;
        ensure(wf.summary("") == base.summary("") && wf == base, || {
            format!("workflow(single phase) differs on seed {seed}")
        })?;
    }
    Ok("50 workloads x 3 degeneracies equal to coschedule".into())
}

fn c5_directional_claims() -> Outcome {
    let run = |tech: &str, s: &Strategy| {
        let (cluster, jobs) = contended_scenario(tech).map_err(|e| e.to_string())?;
        let trace = simulate(&cluster, &jobs, s, 0).map_err(|e| e.to_string())?;
        analyze(&trace, &cluster).map_err(|e| e.to_string())
    };
    let cos = run("superconducting", &Strategy::Coschedule)?;
    let vqpu = run("superconducting", &Strategy::Vqpu { k: 2 })?;
    ensure(vqpu.qpu_utilization > cos.qpu_utilization, || {
        format!("qpu_utilization vqpu {} <= coschedule {}", vqpu.qpu_utilization, cos.qpu_utilization)
    })?;
    let cos_na = run("neutral-atoms", &Strategy::Coschedule)?;
    let mall = run("neutral-atoms", &Strategy::Malleable { retain: 1, backfill: false })?;
    ensure(mall.node_utilization > cos_na.node_utilization, || {
        format!("node_utilization malleable {} <= coschedule {}", mall.node_utilization, cos_na.node_utilization)
    })?;
    Ok(format!(
        "qpu_util vqpu {:.4} > coschedule {:.4}; node_util malleable {:.4} > coschedule {:.4}",
        vqpu.qpu_utilization, cos.qpu_utilization, mall.node_utilization, cos_na.node_utilization
    ))
}

fn c6_oracle() -> Outcome {
    for seed in 0..200u64 {
        let case = random_case(seed);
        let trace = simulate(&case.cluster, &case.jobs, &random_strategy(seed), seed).map_err(|e| e.to_string())?;
        let report = analyze(&trace, &case.cluster).map_err(|e| e.to_string())?;
        ensure(report == oracle(&trace, &case.cluster), || format!("analyze differs from the oracle on seed {seed}"))?;
    }
    Ok("200 traces, exact match".into())
}

fn all_strategies() -> Vec<Strategy> {
    vec![
        Strategy::Coschedule,
        Strategy::Workflow { backfill: false },
        Strategy::Workflow { backfill: true },
        Strategy::Vqpu { k: 2 },
        Strategy::Malleable { retain: 1, backfill: false },
        Strategy::Malleable { retain: 1, backfill: true },
    ]
}

/// Trace dump plus summary and per-job CSV of one run.
fn artifacts(
    cluster: &hybridsched_core::ClusterConfig,
    jobs: &[hybridsched_core::JobSpec],
    s: &Strategy,
    seed: u64,
) -> Result<Vec<u8>, String> {
    let trace = simulate(cluster, jobs, s, seed).map_err(|e| e.to_string())?;
    let report = analyze(&trace, cluster).map_err(|e| e.to_string())?;
    let mut out = trace.dump().into_bytes();
    write_summary_csv(&mut out, &[report.summary(s.name())]).map_err(|e| e.to_string())?;
    write_jobs_csv(&mut out, &[(s.name(), &report)]).map_err(|e| e.to_string())?;
    Ok(out)
}

fn cli_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/generated.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_hybridsched"))
        .args(["compare", "--config"])
        .arg(&cfg)
        .args(["--strategies", "coschedule,workflow,vqpu,malleable", "--trace", "--out"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), bytes);
    }
    Ok(files)
}

fn c7_determinism() -> Outcome {
    let mut scenarios = Vec::new();
    for tech in ["superconducting", "neutral-atoms"] {
        scenarios.push(paper_scenario(tech).map_err(|e| e.to_string())?);
        scenarios.push(contended_scenario(tech).map_err(|e| e.to_string())?);
    }
    for seed in 0..20u64 {
        let case = random_case(seed);
        scenarios.push((case.cluster, case.jobs));
    }
    let mut runs = 0;
    for (i, (cluster, jobs)) in scenarios.iter().enumerate() {
        for s in all_strategies() {
            let seed = i as u64;
            let a = artifacts(cluster, jobs, &s, seed)?;
            let b = artifacts(cluster, jobs, &s, seed)?;
            ensure(a == b, || format!("scenario {i} under {} is not reproducible", s.name()))?;
            runs += 1;
        }
    }
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let first = cli_outputs(&tmp.path().join("a"))?;
    let second = cli_outputs(&tmp.path().join("b"))?;
    ensure(first == second, || "CLI output files differ between runs".into())?;
    Ok(format!("{runs} library runs and {} CLI files byte-identical", first.len()))
}

fn replace_line(text: &str, line: usize, with: &str) -> String {
    let mut lines: Vec<&str> = text.lines().collect();
    lines[line - 1] = with;
    lines.join("\n") + "\n"
}

fn c8_parser() -> Outcome {
    let script = parse_hetjob(LISTING_1).map_err(|e| e.to_string())?;
    let want = vec![
        ResourceRequest { component_id: 0, partition: Partition::Classical, nodes: 10, qpu_gres: 0, walltime: 3600.0 },
        ResourceRequest { component_id: 1, partition: Partition::Quantum, nodes: 0, qpu_gres: 1, walltime: 3600.0 },
    ];
    ensure(script.requests == want, || format!("listing parsed to {:?}", script.requests))?;
    ensure(script.payload == "srun ./hybrid_job", || format!("payload {:?}", script.payload))?;

    use ParseErrorKind::*;
    let edit = |line, with| replace_line(LISTING_1, line, with);
    let corpus: Vec<(&str, String, Expected)> = vec![
        ("time with a unit", edit(4, "#SBATCH --time=1h"), vec![(MalformedTime, 4)]),
        ("no partition", edit(2, "# partition dropped"), vec![(MissingPartition(0), 3)]),
        ("unsupported option", edit(3, "#SBATCH --account=proj"), vec![(UnknownDirective, 3)]),
        ("unsupported option after the directives", edit(9, "#SBATCH --mem=4G"), vec![(UnknownDirective, 9)]),
        ("zero QPUs", edit(7, "#SBATCH --gres=qpu:0"), vec![(MalformedGres, 7)]),
        ("not a QPU gres", edit(7, "#SBATCH --gres=gpu:1"), vec![(MalformedGres, 7)]),
        ("quantum component without time", edit(8, "# time dropped"), vec![(MissingWalltime(1), 5)]),
        ("no directives", "#!/bin/bash\nsrun ./hybrid_job\n".to_string(), vec![(EmptyScript, 0)]),
        ("non-numeric nodes", edit(3, "#SBATCH --nodes ten"), vec![(MalformedNodes, 3)]),
        ("unknown partition", edit(6, "#SBATCH --partition gpu"), vec![(UnknownPartition, 6)]),
        ("nodes given twice", edit(4, "#SBATCH --nodes 12"), vec![(MissingWalltime(0), 2), (DuplicateDirective, 4)]),
        ("nodes on the quantum partition", edit(7, "#SBATCH --nodes 2"), vec![(PartitionMismatch, 7)]),
    ];
    for (name, text, expected) in &corpus {
        let errors = match parse_hetjob(text) {
            Ok(_) => return Err(format!("{name}: parsed without error")),
            Err(e) => e.0.into_iter().map(|e| (e.kind, e.line)).collect::<Vec<_>>(),
        };
        ensure(&errors == expected, || format!("{name}: got {errors:?}, expected {expected:?}"))?;
    }
    Ok(format!("listing parses to 2 components; {} malformed scripts give the expected errors", corpus.len()))
}

fn c9_conservation() -> Outcome {
    let mut seen = BTreeMap::new();
    for seed in 0..500u64 {
        let case = random_case(seed);
        let strategy = random_strategy(seed);
        let trace = simulate(&case.cluster, &case.jobs, &strategy, seed).map_err(|e| e.to_string())?;
        let violations = check_conservation(&trace, &strategy.cluster_for(&case.cluster));
        ensure(violations.is_empty(), || format!("seed {seed} ({}): {:?}", strategy.name(), violations[0]))?;
        *seen.entry(strategy.name()).or_insert(0) += 1;
    }
    ensure(seen.len() == 4, || format!("strategies covered: {seen:?}"))?;
    Ok(format!("500 runs {seen:?}, 0 violations"))
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(u32, &str, Check, Duration); 9] = [
        (1, "superconducting QPU utilization", c1_superconducting_headline, Duration::from_secs(1)),
        (2, "neutral-atoms idle fraction", c2_neutral_atoms_headline, Duration::from_secs(1)),
        (3, "vqpu wait bound", c3_vqpu_wait_bound, Duration::from_secs(30)),
        (4, "degeneracy equivalences", c4_degeneracies, Duration::from_secs(60)),
        (5, "directional claims", c5_directional_claims, Duration::MAX),
        (6, "oracle equivalence", c6_oracle, Duration::from_secs(60)),
        (7, "determinism", c7_determinism, Duration::MAX),
        (8, "parser", c8_parser, Duration::MAX),
        (9, "conservation", c9_conservation, Duration::from_secs(300)),
    ];
    let mut failed = Vec::new();
    for (n, name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed > limit {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            } else {
                Ok(detail)
            }
        });
        match outcome {
            Ok(detail) => report(format!("criterion {n}: PASS  {name}: {detail} ({elapsed:.2?})")),
            Err(why) => {
                report(format!("criterion {n}: FAIL  {name}: {why} ({elapsed:.2?})"));
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Written to the process's stdout directly so the lines show up even when
/// the test harness captures output.
fn report(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}
