//! Scenario configuration files.
//!
//! ```toml
//! seed = 7
//!
//! [cluster]
//! classical_nodes = 10
//! vqpus_per_qpu = 1
//! [[cluster.qpus]]
//! profile = "superconducting"      # or a table: name, task_duration, calibration_overhead
//! count = 1
//!
//! [workload]                       # exactly one of: generate, file, hetjob, paper
//! paper = "superconducting"
//!
//! [strategy]
//! name = "vqpu"
//! k = 2
//!
//! [output]
//! dir = "out"
//! format = "csv"
//! trace = true
//! ```

use std::path::{Path, PathBuf};

use hybridsched_core::workload::{self, WorkloadProfile};
use hybridsched_core::{
    generate, paper_scenario, parse_hetjob, ClusterConfig, JobId, JobSpec, Phase, QpuPool, QpuTechnologyProfile,
    Strategy,
};
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{config, CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    cluster: Option<ClusterSection>,
    workload: WorkloadSection,
    #[serde(default)]
    strategy: StrategySection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterSection {
    classical_nodes: u32,
    #[serde(default = "one")]
    vqpus_per_qpu: u32,
    #[serde(default)]
    qpus: Vec<QpuSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QpuSection {
    profile: ProfileSpec,
    #[serde(default = "one")]
    count: u32,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ProfileSpec {
    Builtin(String),
    Custom(QpuTechnologyProfile),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadSection {
    generate: Option<Value>,
    file: Option<PathBuf>,
    hetjob: Option<HetjobSection>,
    paper: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HetjobSection {
    script: PathBuf,
    phases: Vec<Phase>,
    #[serde(default = "one")]
    count: u32,
    /// Seconds between consecutive submissions.
    #[serde(default)]
    submit_interval: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    #[serde(default = "coschedule")]
    pub name: String,
    /// Virtual QPUs per physical QPU; defaults to `cluster.vqpus_per_qpu`.
    pub k: Option<u32>,
    #[serde(default = "one")]
    pub retain: u32,
    #[serde(default)]
    pub backfill: bool,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self { name: coschedule(), k: None, retain: 1, backfill: false }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub trace: bool,
}

fn one() -> u32 {
    1
}

fn coschedule() -> String {
    "coschedule".into()
}

/// A fully resolved scenario: the workload is materialized into jobs.
#[derive(Debug)]
pub struct Scenario {
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub jobs: Vec<JobSpec>,
    pub strategy: StrategySection,
    pub output: OutputSection,
}

impl Scenario {
    /// The configured strategy, or `name` with the configured parameters.
    /// `strict` rejects parameters the strategy does not support.
    pub fn strategy_named(&self, name: &str, strict: bool) -> CliResult<Strategy> {
        let s = &self.strategy;
        let supports_backfill = matches!(name, "workflow" | "malleable");
        if strict && s.backfill && !supports_backfill {
            return Err(config(format!("strategy.backfill is not supported by {name} (only workflow and malleable)")));
        }
        let k = s.k.unwrap_or(self.cluster.vqpus_per_qpu);
        let strategy = Strategy::from_name(name, k, s.retain, s.backfill && supports_backfill)
            .ok_or_else(|| config(format!("unknown strategy {name:?}; valid names: {}", Strategy::NAMES.join(", "))))?;
        strategy.validate().map_err(config)?;
        Ok(strategy)
    }
}

/// Applies `section.key=value`. The value is read as a TOML value when it
/// parses as one and as a plain string otherwise.
pub fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let (path, raw) =
        assignment.split_once('=').ok_or_else(|| config(format!("--set expects key=value, got {assignment:?}")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config(format!("--set: bad key {path:?}")));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut node = table;
    for key in parents {
        let entry = node.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry.as_table_mut().ok_or_else(|| config(format!("--set {path}: {key} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn build_cluster(section: ClusterSection) -> CliResult<ClusterConfig> {
    let qpus = section
        .qpus
        .into_iter()
        .map(|q| {
            let profile = match q.profile {
                ProfileSpec::Builtin(name) => QpuTechnologyProfile::builtin(&name)
                    .ok_or_else(|| config(format!("cluster.qpus: unknown built-in profile {name:?}")))?,
                ProfileSpec::Custom(p) => p,
            };
            Ok(QpuPool { profile, count: q.count })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cluster =
        ClusterConfig { classical_nodes: section.classical_nodes, qpus, vqpus_per_qpu: section.vqpus_per_qpu };
    cluster.validate().map_err(|e| config(format!("cluster: {e}")))?;
    Ok(cluster)
}

fn load_jobs(workload: WorkloadSection, base: &Path, seed: u64, cluster: &ClusterConfig) -> CliResult<Vec<JobSpec>> {
    let sources =
        [workload.generate.is_some(), workload.file.is_some(), workload.hetjob.is_some(), workload.paper.is_some()];
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(config("workload: set exactly one of generate, file, hetjob, paper"));
    }
    if let Some(mut value) = workload.generate {
        if let Some(t) = value.as_table_mut() {
            t.entry("seed").or_insert(Value::Integer(seed as i64));
        }
        let profile: WorkloadProfile = value.try_into().map_err(|e| config(format!("workload.generate: {e}")))?;
        let technology_known = cluster.qpus.iter().any(|p| p.profile.name == profile.technology);
        if !technology_known {
            return Err(config(format!(
                "workload.generate.technology {:?} is not a QPU profile of the cluster",
                profile.technology
            )));
        }
        return generate(&profile).map_err(|e| config(format!("workload.generate: {e}")));
    }
    if let Some(file) = workload.file {
        let path = resolve(base, &file);
        let f = std::fs::File::open(&path).map_err(|e| config(format!("workload.file {}: {e}", path.display())))?;
        return workload::read_jobs(std::io::BufReader::new(f))
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())));
    }
    if let Some(h) = workload.hetjob {
        let path = resolve(base, &h.script);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| config(format!("workload.hetjob.script {}: {e}", path.display())))?;
        let script = parse_hetjob(&text).map_err(|e| CliError::Parse(e.render(&h.script.display().to_string())))?;
        return Ok((0..h.count)
            .map(|i| JobSpec {
                job_id: JobId(u64::from(i) + 1),
                submit_time: f64::from(i) * h.submit_interval,
                requests: script.requests.clone(),
                phases: h.phases.clone(),
            })
            .collect());
    }
    let tech = workload.paper.expect("one source is set");
    let (_, jobs) = paper_scenario(&tech).map_err(|e| config(e.to_string()))?;
    Ok(jobs)
}

/// Reads and resolves a config file, applying `--set` overrides first.
pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> CliResult<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let mut table: Table = text.parse().map_err(|e| config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), Value::Integer(seed as i64));
    }
    let raw: RawConfig = Value::Table(table).try_into().map_err(|e| config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cluster = match (raw.cluster, &raw.workload.paper) {
        (Some(section), _) => build_cluster(section)?,
        (None, Some(tech)) => paper_scenario(tech).map_err(|e| config(e.to_string()))?.0,
        (None, None) => return Err(config("missing [cluster] section")),
    };
    let jobs = load_jobs(raw.workload, base, raw.seed, &cluster)?;
    let output = OutputSection { dir: raw.output.dir.map(|d| resolve(base, &d)), ..raw.output };
    Ok(Scenario { seed: raw.seed, cluster, jobs, strategy: raw.strategy, output })
}
