//! Parser for SLURM-style heterogeneous job scripts.
//!
//! Only the directives needed to describe a hybrid job are understood:
//! `--partition`, `--nodes`, `--time`, `--gres=qpu:N` and the `hetjob`
//! separator. Any other `#SBATCH` line is rejected.

use std::fmt;

use thiserror::Error;

use crate::model::{Partition, ResourceRequest, Seconds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DirectiveKey {
    Partition,
    Nodes,
    Time,
    Gres,
    Hetjob,
}

impl DirectiveKey {
    fn flag(self) -> &'static str {
        match self {
            DirectiveKey::Partition => "--partition",
            DirectiveKey::Nodes => "--nodes",
            DirectiveKey::Time => "--time",
            DirectiveKey::Gres => "--gres",
            DirectiveKey::Hetjob => "hetjob",
        }
    }
}

/// One `#SBATCH` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptDirective {
    pub key: DirectiveKey,
    pub value: Option<String>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("UnknownDirective")]
    UnknownDirective,
    #[error("MalformedTime")]
    MalformedTime,
    #[error("MalformedGres")]
    MalformedGres,
    #[error("MalformedNodes")]
    MalformedNodes,
    #[error("UnknownPartition")]
    UnknownPartition,
    #[error("DuplicateDirective")]
    DuplicateDirective,
    #[error("PartitionMismatch")]
    PartitionMismatch,
    #[error("MissingPartition(component {0})")]
    MissingPartition(usize),
    #[error("MissingWalltime(component {0})")]
    MissingWalltime(usize),
    #[error("EmptyScript")]
    EmptyScript,
}

/// A parse error anchored at a 1-based source line (`0` when the error
/// concerns the whole script).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub detail: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, line: usize, detail: impl Into<String>) -> Self {
        Self { kind, line, detail: detail.into() }
    }

    /// `<file>:<line>: <Kind>: detail`, or `<file>: <Kind>` without a line.
    pub fn render(&self, file: &str) -> String {
        let head = if self.line == 0 {
            format!("{file}: {}", self.kind)
        } else {
            format!("{file}:{}: {}", self.line, self.kind)
        };
        if self.detail.is_empty() {
            head
        } else {
            format!("{head}: {}", self.detail)
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)?;
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

/// All errors found in a script, in source order. Never empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseErrors(pub Vec<ParseError>);

impl ParseErrors {
    pub fn first(&self) -> &ParseError {
        &self.0[0]
    }

    pub fn render(&self, file: &str) -> String {
        self.0.iter().map(|e| e.render(file)).collect::<Vec<_>>().join("\n")
    }
}

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&lines.join("; "))
    }
}

impl std::error::Error for ParseErrors {}

#[derive(Clone, Debug, PartialEq)]
pub struct HetjobScript {
    pub requests: Vec<ResourceRequest>,
    /// Command lines following the last directive, kept verbatim.
    pub payload: String,
}

/// Parses `HH:MM:SS` (one or more hour digits, two-digit minutes and seconds).
pub fn parse_walltime(s: &str) -> Option<Seconds> {
    let mut parts = s.split(':');
    let (h, m, sec) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if !digits(h) || !(digits(m) && m.len() == 2) || !(digits(sec) && sec.len() == 2) {
        return None;
    }
    let (h, m, sec): (u64, u64, u64) = (h.parse().ok()?, m.parse().ok()?, sec.parse().ok()?);
    if m > 59 || sec > 59 {
        return None;
    }
    let total = h.checked_mul(3600)?.checked_add(m * 60 + sec)?;
    (total > 0).then_some(total as Seconds)
}

pub fn format_walltime(seconds: Seconds) -> String {
    let total = seconds.round() as u64;
    format!("{:02}:{:02}:{:02}", total / 3600, (total / 60) % 60, total % 60)
}

fn parse_gres(s: &str) -> Option<u32> {
    let n = s.strip_prefix("qpu:")?;
    if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    n.parse().ok().filter(|&n| n >= 1)
}

fn parse_directive(rest: &str, line: usize) -> Result<ScriptDirective, ParseError> {
    let rest = rest.trim();
    if rest == "hetjob" {
        return Ok(ScriptDirective { key: DirectiveKey::Hetjob, value: None, line });
    }
    let unknown = || ParseError::new(ParseErrorKind::UnknownDirective, line, format!("{rest:?}"));
    let Some(opt) = rest.strip_prefix("--") else {
        return Err(unknown());
    };
    let (name, value) = match opt.split_once('=') {
        Some((n, v)) => (n, Some(v.trim())),
        None => match opt.split_once(char::is_whitespace) {
            Some((n, v)) => (n, Some(v.trim())),
            None => (opt, None),
        },
    };
    let key = match name {
        "partition" => DirectiveKey::Partition,
        "nodes" => DirectiveKey::Nodes,
        "time" => DirectiveKey::Time,
        "gres" => DirectiveKey::Gres,
        _ => return Err(unknown()),
    };
    Ok(ScriptDirective { key, value: value.map(str::to_string), line })
}

#[derive(Default)]
struct Component {
    start_line: usize,
    partition: Option<(Partition, usize)>,
    nodes: Option<(u32, usize)>,
    time: Option<(Seconds, usize)>,
    gres: Option<(u32, usize)>,
    /// Keys whose value failed to parse; not reported again as missing.
    rejected: Vec<DirectiveKey>,
}

impl Component {
    fn slot_taken(&self, key: DirectiveKey) -> bool {
        match key {
            DirectiveKey::Partition => self.partition.is_some(),
            DirectiveKey::Nodes => self.nodes.is_some(),
            DirectiveKey::Time => self.time.is_some(),
            DirectiveKey::Gres => self.gres.is_some(),
            DirectiveKey::Hetjob => false,
        }
    }

    fn finish(self, id: usize, errors: &mut Vec<ParseError>) -> Option<ResourceRequest> {
        if self.partition.is_none() && !self.rejected.contains(&DirectiveKey::Partition) {
            errors.push(ParseError::new(ParseErrorKind::MissingPartition(id), self.start_line, ""));
        }
        if self.time.is_none() && !self.rejected.contains(&DirectiveKey::Time) {
            errors.push(ParseError::new(ParseErrorKind::MissingWalltime(id), self.start_line, ""));
        }
        let ((partition, _), (walltime, _)) = (self.partition?, self.time?);
        match (partition, self.nodes, self.gres) {
            (Partition::Classical, _, Some((_, line))) => {
                errors.push(ParseError::new(
                    ParseErrorKind::PartitionMismatch,
                    line,
                    "qpu gres on the classical partition",
                ));
                None
            }
            (Partition::Quantum, Some((n, line)), _) if n > 0 => {
                errors.push(ParseError::new(ParseErrorKind::PartitionMismatch, line, "nodes on the quantum partition"));
                None
            }
            _ => Some(ResourceRequest {
                component_id: id,
                partition,
                nodes: self.nodes.map_or(0, |(n, _)| n),
                qpu_gres: self.gres.map_or(0, |(g, _)| g),
                walltime,
            }),
        }
    }
}

/// Parses a hetjob script into one [`ResourceRequest`] per component.
pub fn parse_hetjob(script: &str) -> Result<HetjobScript, ParseErrors> {
    let mut errors = Vec::new();
    let mut components: Vec<Component> = Vec::new();
    let mut current: Option<Component> = None;
    let mut last_directive_line = 0;
    let lines: Vec<&str> = script.lines().collect();

    for (idx, raw) in lines.iter().enumerate() {
        let line_no = idx + 1;
        let Some(rest) = raw.strip_prefix("#SBATCH") else { continue };
        if !(rest.is_empty() || rest.starts_with(char::is_whitespace)) {
            continue;
        }
        last_directive_line = line_no;
        let directive = match parse_directive(rest, line_no) {
            Ok(d) => d,
            Err(e) => {
                errors.push(e);
                current.get_or_insert_with(|| Component { start_line: line_no, ..Component::default() });
                continue;
            }
        };
        if directive.key == DirectiveKey::Hetjob {
            components.push(current.take().unwrap_or(Component { start_line: line_no, ..Component::default() }));
            current = Some(Component { start_line: line_no, ..Component::default() });
            continue;
        }
        let comp = current.get_or_insert_with(|| Component { start_line: line_no, ..Component::default() });
        if comp.slot_taken(directive.key) {
            errors.push(ParseError::new(ParseErrorKind::DuplicateDirective, line_no, directive.key.flag()));
            continue;
        }
        let value = directive.value.as_deref().unwrap_or("");
        let before = errors.len();
        match directive.key {
            DirectiveKey::Partition => match value.parse::<Partition>() {
                Ok(p) => comp.partition = Some((p, line_no)),
                Err(()) => {
                    errors.push(ParseError::new(ParseErrorKind::UnknownPartition, line_no, format!("{value:?}")))
                }
            },
            DirectiveKey::Nodes => match value.parse::<u32>() {
                Ok(n) if value.bytes().all(|b| b.is_ascii_digit()) => comp.nodes = Some((n, line_no)),
                _ => errors.push(ParseError::new(ParseErrorKind::MalformedNodes, line_no, format!("{value:?}"))),
            },
            DirectiveKey::Time => match parse_walltime(value) {
                Some(t) => comp.time = Some((t, line_no)),
                None => errors.push(ParseError::new(
                    ParseErrorKind::MalformedTime,
                    line_no,
                    format!("expected HH:MM:SS, got {value:?}"),
                )),
            },
            DirectiveKey::Gres => match parse_gres(value) {
                Some(g) => comp.gres = Some((g, line_no)),
                None => errors.push(ParseError::new(
                    ParseErrorKind::MalformedGres,
                    line_no,
                    format!("expected qpu:N with N >= 1, got {value:?}"),
                )),
            },
            DirectiveKey::Hetjob => unreachable!(),
        }
        if errors.len() > before {
            comp.rejected.push(directive.key);
        }
    }

    if last_directive_line == 0 {
        return Err(ParseErrors(vec![ParseError::new(ParseErrorKind::EmptyScript, 0, "")]));
    }
    components.extend(current);

    let mut requests = Vec::with_capacity(components.len());
    let mut component_errors = Vec::new();
    for (id, comp) in components.into_iter().enumerate() {
        if let Some(req) = comp.finish(id, &mut component_errors) {
            requests.push(req);
        }
    }
    errors.extend(component_errors);
    if !errors.is_empty() {
        errors.sort_by_key(|e| e.line);
        return Err(ParseErrors(errors));
    }

    let payload = lines[last_directive_line..]
        .iter()
        .skip_while(|l| l.trim().is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join("\n")
        .trim_end()
        .to_string();
    Ok(HetjobScript { requests, payload })
}

/// Renders requests back into script text that [`parse_hetjob`] accepts.
pub fn render_hetjob(requests: &[ResourceRequest], payload: &str) -> String {
    let mut out = String::from("#!/bin/bash\n");
    for (i, req) in requests.iter().enumerate() {
        if i > 0 {
            out.push_str("#SBATCH hetjob\n");
        }
        out.push_str(&format!("#SBATCH --partition {}\n", req.partition));
        if req.nodes > 0 {
            out.push_str(&format!("#SBATCH --nodes {}\n", req.nodes));
        }
        if req.qpu_gres > 0 {
            out.push_str(&format!("#SBATCH --gres=qpu:{}\n", req.qpu_gres));
        }
        out.push_str(&format!("#SBATCH --time={}\n", format_walltime(req.walltime)));
    }
    if !payload.is_empty() {
        out.push('\n');
        out.push_str(payload);
        out.push('\n');
    }
    out
}
