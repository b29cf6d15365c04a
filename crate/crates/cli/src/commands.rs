use std::path::{Path, PathBuf};

use hybridsched_core::{
    analyze, compare, contended_scenario, paper_scenario, parse_hetjob, simulate, ClusterConfig, ComparisonTable,
    JobSpec, MetricsReport, SimError, Strategy, Trace,
};
use serde::Serialize;

use crate::config::{self, Format, Scenario};
use crate::error::{config, CliError, CliResult};
use crate::report::{self, Run};

/// Output flags shared by the simulation commands.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct OutputArgs {
    /// Directory for CSV/JSON/trace files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine format; `json` also switches standard output to JSON.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Also dump the event trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Clone, Debug, clap::Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config value, e.g. `--set strategy.k=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

struct Settings {
    dir: Option<PathBuf>,
    format: Format,
    trace: bool,
}

fn settings(scenario: &Scenario, args: &OutputArgs) -> Settings {
    Settings {
        dir: args.out.clone().or_else(|| scenario.output.dir.clone()),
        format: args.format.unwrap_or(scenario.output.format),
        trace: args.trace || scenario.output.trace,
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::InvalidStrategy(m) => config(m),
        SimError::InvalidCluster(e) => config(e.to_string()),
        SimError::Validation(e) => CliError::Validation(e.to_string()),
        SimError::Fault(f) => CliError::Fault(f.to_string()),
    }
}

fn run_one(
    cluster: &ClusterConfig,
    jobs: &[JobSpec],
    strategy: &Strategy,
    seed: u64,
) -> CliResult<(Trace, MetricsReport)> {
    let trace = simulate(cluster, jobs, strategy, seed).map_err(sim_error)?;
    let report = analyze(&trace, cluster).map_err(|e| CliError::Fault(e.to_string()))?;
    Ok((trace, report))
}

/// Runs the strategies side by side; results come back in input order.
fn run_all(
    cluster: &ClusterConfig,
    jobs: &[JobSpec],
    strategies: &[Strategy],
    seed: u64,
) -> CliResult<Vec<(Trace, MetricsReport)>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = strategies.iter().map(|s| scope.spawn(move || run_one(cluster, jobs, s, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}

fn comparison(
    cluster: &ClusterConfig,
    jobs: &[JobSpec],
    strategies: &[Strategy],
    seed: u64,
) -> CliResult<(Vec<(Trace, MetricsReport)>, ComparisonTable)> {
    let results = run_all(cluster, jobs, strategies, seed)?;
    let named: Vec<(String, MetricsReport)> =
        strategies.iter().zip(&results).map(|(s, (_, r))| (s.name().to_string(), r.clone())).collect();
    let table = compare(&named).map_err(|e| CliError::Fault(e.to_string()))?;
    Ok((results, table))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

pub fn cmd_simulate(args: &ConfigArgs, strategy: Option<&str>) -> CliResult<()> {
    let mut scenario = config::load(&args.config, &args.overrides, args.seed)?;
    if let Some(name) = strategy {
        scenario.strategy.name = name.to_string();
    }
    let strategy = scenario.strategy_named(&scenario.strategy.name.clone(), true)?;
    let (trace, report) = run_one(&scenario.cluster, &scenario.jobs, &strategy, scenario.seed)?;
    let out = settings(&scenario, &args.output);
    let summary = report.summary(strategy.name());
    if out.format == Format::Json {
        print_json(&summary);
    } else {
        println!(
            "{} on {} nodes / {} QPUs, {} jobs, seed {}",
            strategy.name(),
            scenario.cluster.classical_nodes,
            scenario.cluster.physical_qpus(),
            scenario.jobs.len(),
            scenario.seed
        );
        print!("{}", report::summary_table(&summary, &report));
    }
    if let Some(dir) = &out.dir {
        let runs = [Run { name: strategy.name(), trace: &trace, report: &report }];
        report::write_outputs(dir, &runs, None, out.format, out.trace)?;
    }
    Ok(())
}

fn parse_strategy_list(names: &[String]) -> CliResult<Vec<String>> {
    let names: Vec<String> = names.iter().map(|n| n.trim().to_string()).filter(|n| !n.is_empty()).collect();
    for n in &names {
        if !Strategy::NAMES.contains(&n.as_str()) {
            return Err(config(format!("unknown strategy {n:?}; valid names: {}", Strategy::NAMES.join(", "))));
        }
    }
    if names.len() < 2 {
        return Err(config("compare needs at least two strategies"));
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(config(format!("strategy {n:?} listed twice")));
        }
    }
    Ok(names)
}

pub fn cmd_compare(args: &ConfigArgs, names: &[String]) -> CliResult<()> {
    let names = parse_strategy_list(names)?;
    let scenario = config::load(&args.config, &args.overrides, args.seed)?;
    let strategies = names.iter().map(|n| scenario.strategy_named(n, false)).collect::<CliResult<Vec<_>>>()?;
    let (results, table) = comparison(&scenario.cluster, &scenario.jobs, &strategies, scenario.seed)?;
    let out = settings(&scenario, &args.output);
    if out.format == Format::Json {
        print_json(&table);
    } else {
        print!("{}", report::comparison_table(&table));
    }
    if let Some(dir) = &out.dir {
        let runs: Vec<Run<'_>> =
            names.iter().zip(&results).map(|(name, (trace, report))| Run { name, trace, report }).collect();
        report::write_outputs(dir, &runs, Some(&table), out.format, out.trace)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PaperOutput<'a> {
    technology: &'a str,
    single: &'a ComparisonTable,
    contended: &'a ComparisonTable,
}

fn scenario_strategies() -> Vec<Strategy> {
    vec![
        Strategy::Coschedule,
        Strategy::Workflow { backfill: false },
        Strategy::Vqpu { k: 2 },
        Strategy::Malleable { retain: 1, backfill: false },
    ]
}

pub fn cmd_paper_scenario(tech: &str, seed: u64, args: &OutputArgs) -> CliResult<()> {
    let (cluster, jobs) = paper_scenario(tech).map_err(|e| config(e.to_string()))?;
    let (c_cluster, c_jobs) = contended_scenario(tech).map_err(|e| config(e.to_string()))?;
    let strategies = scenario_strategies();
    let (results, single) = comparison(&cluster, &jobs, &strategies, seed)?;
    let (c_results, contended) = comparison(&c_cluster, &c_jobs, &strategies, seed)?;
    let format = args.format.unwrap_or_default();
    if format == Format::Json {
        print_json(&PaperOutput { technology: tech, single: &single, contended: &contended });
    } else {
        let base = &results[0].1;
        println!(
            "{tech}: one hybrid job, {} nodes + {} QPU, 1 h walltime",
            cluster.classical_nodes,
            cluster.physical_qpus()
        );
        println!(
            "coschedule QPU utilization (busy/allocated): {:.4} ({} s busy of {} s allocated)",
            base.qpu_alloc_utilization, base.qpus[0].busy, base.qpus[0].allocated
        );
        println!(
            "coschedule allocated-idle node fraction: {:.4} ({} node-s idle of {} node-s allocated)",
            base.node_alloc_idle_fraction, base.node_idle_allocated, base.node_allocated
        );
        println!("imbalance: {}\n", single.rows[0].imbalance.as_str());
        print!("{}", report::comparison_table(&single));
        let variant = match tech {
            "superconducting" => "two concurrent jobs on 20 nodes sharing the QPU",
            _ => "the job plus a 9-node classical job that fits the shrunk allocation",
        };
        println!("\ncontended variant: {variant}");
        print!("{}", report::comparison_table(&contended));
    }
    if let Some(dir) = &args.out {
        for (sub, res, table) in [("single", &results, &single), ("contended", &c_results, &contended)] {
            let runs: Vec<Run<'_>> =
                strategies.iter().zip(res).map(|(s, (trace, report))| Run { name: s.name(), trace, report }).collect();
            report::write_outputs(&dir.join(sub), &runs, Some(table), format, args.trace)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ParsedScript<'a> {
    requests: &'a [hybridsched_core::ResourceRequest],
    payload: &'a str,
}

pub fn cmd_parse(path: &Path, format: Option<Format>) -> CliResult<()> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let script = parse_hetjob(&text).map_err(|e| CliError::Parse(e.render(&path.display().to_string())))?;
    if format == Some(Format::Json) {
        print_json(&ParsedScript { requests: &script.requests, payload: &script.payload });
        return Ok(());
    }
    for r in &script.requests {
        println!(
            "component {}: partition={} nodes={} qpu_gres={} walltime={}",
            r.component_id, r.partition, r.nodes, r.qpu_gres, r.walltime
        );
    }
    if !script.payload.is_empty() {
        println!("payload: {}", script.payload.replace('\n', "\\n"));
    }
    Ok(())
}
