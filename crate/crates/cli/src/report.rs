//! Human-readable tables and output files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use hybridsched_core::metrics::{write_comparison_csv, write_jobs_csv, write_summary_csv};
use hybridsched_core::{ComparisonTable, MetricsReport, SummaryRecord, Trace};

use crate::config::Format;
use crate::error::{config, CliResult};

const HEADER: [&str; 10] = [
    "strategy",
    "qpu_util",
    "qpu_alloc_util",
    "node_util",
    "idle_node_s",
    "idle_frac",
    "makespan_s",
    "mean_wait_s",
    "killed",
    "imbalance",
];

fn cells(s: &SummaryRecord, imbalance: &str) -> Vec<String> {
    vec![
        s.strategy.clone(),
        format!("{:.4}", s.qpu_utilization),
        format!("{:.4}", s.qpu_alloc_utilization),
        format!("{:.4}", s.node_utilization),
        format!("{:.1}", s.node_idle_allocated),
        format!("{:.4}", s.node_alloc_idle_fraction),
        format!("{:.1}", s.makespan),
        format!("{:.1}", s.mean_wait),
        s.killed_jobs.to_string(),
        imbalance.to_string(),
    ]
}

fn layout(rows: &[Vec<String>]) -> String {
    let mut widths = vec![0; HEADER.len()];
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn summary_table(summary: &SummaryRecord, report: &MetricsReport) -> String {
    let header: Vec<String> = HEADER.iter().map(|s| s.to_string()).collect();
    let imbalance = hybridsched_core::Imbalance::of(report).as_str();
    layout(&[header, cells(summary, imbalance)])
}

pub fn comparison_table(table: &ComparisonTable) -> String {
    let mut rows = vec![HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    rows.extend(table.rows.iter().map(|r| cells(&r.summary, r.imbalance.as_str())));
    let mut out = layout(&rows);
    out.push_str(&format!("\ndeltas vs {}:\n", table.baseline));
    let mut deltas = vec![vec![
        "strategy".to_string(),
        "qpu_util".into(),
        "node_util".into(),
        "idle_node_s".into(),
        "makespan_s".into(),
        "mean_wait_s".into(),
    ]];
    for r in table.rows.iter().skip(1) {
        deltas.push(vec![
            r.summary.strategy.clone(),
            format!("{:+.4}", r.delta_qpu_utilization),
            format!("{:+.4}", r.delta_node_utilization),
            format!("{:+.1}", r.delta_node_idle_allocated),
            format!("{:+.1}", r.delta_makespan),
            format!("{:+.1}", r.delta_mean_wait),
        ]);
    }
    out.push_str(&layout(&deltas));
    out
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> crate::error::CliError {
    config(format!("writing CSV: {e}"))
}

pub struct Run<'a> {
    pub name: &'a str,
    pub trace: &'a Trace,
    pub report: &'a MetricsReport,
}

/// Writes `summary.csv`, `jobs.csv`, optionally `comparison.csv`, one
/// trace dump per run and, for JSON output, `summary.json`.
pub fn write_outputs(
    dir: &Path,
    runs: &[Run<'_>],
    table: Option<&ComparisonTable>,
    format: Format,
    trace: bool,
) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| config(format!("{}: {e}", dir.display())))?;
    let summaries: Vec<SummaryRecord> = runs.iter().map(|r| r.report.summary(r.name)).collect();
    write_summary_csv(create(dir, "summary.csv")?, &summaries).map_err(csv_err)?;
    let jobs: Vec<(&str, &MetricsReport)> = runs.iter().map(|r| (r.name, r.report)).collect();
    write_jobs_csv(create(dir, "jobs.csv")?, &jobs).map_err(csv_err)?;
    if let Some(table) = table {
        write_comparison_csv(create(dir, "comparison.csv")?, table).map_err(csv_err)?;
    }
    if trace {
        for r in runs {
            let name = if runs.len() == 1 { "trace.tsv".to_string() } else { format!("trace-{}.tsv", r.name) };
            let path = dir.join(name);
            fs::write(&path, r.trace.dump()).map_err(|e| config(format!("{}: {e}", path.display())))?;
        }
    }
    if format == Format::Json {
        let json = match table {
            Some(t) => serde_json::to_string_pretty(t),
            None => serde_json::to_string_pretty(&summaries[0]),
        }
        .expect("summaries serialize");
        let path = dir.join("summary.json");
        fs::write(&path, json + "\n").map_err(|e| config(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
