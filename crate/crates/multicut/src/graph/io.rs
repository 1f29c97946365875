//! Text formats for instances and solutions.
//!
//! Instance format `.mcg`: line 1 is `p mc <n> <m>`, followed by `m` lines
//! `e <u> <v> <w>` with 0-based decimal endpoints and the weight printed as
//! the shortest decimal that round-trips the f64 exactly (at most 17
//! significant digits). `#` comment lines are allowed anywhere; lines end
//! with LF.
//!
//! Solution format `.sol`: line 1 is `s <objective>`, line 2 holds `m`
//! space-separated 0/1 labels in edge-index order.

use super::{EdgeLabeling, GraphError, WeightedGraph};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// A parse failure, with the 1-based line number it occurred on.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl FormatError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        FormatError {
            line,
            message: message.into(),
        }
    }
}

/// Reading or writing an instance/solution file failed.
#[derive(Debug, Error)]
pub enum McgIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Serializes a graph into the `.mcg` text format.
pub fn write_mcg(graph: &WeightedGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "p mc {} {}", graph.node_count(), graph.edge_count());
    for e in graph.edges() {
        let _ = writeln!(out, "e {} {} {}", e.u, e.v, e.weight);
    }
    out
}

/// Parses the `.mcg` text format and validates the graph.
pub fn read_mcg(text: &str) -> Result<WeightedGraph, McgIoError> {
    let mut lines = content_lines(text);
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| FormatError::new(1, "missing 'p mc <n> <m>' header"))?;
    let mut parts = header.split_whitespace();
    if (parts.next(), parts.next()) != (Some("p"), Some("mc")) {
        return Err(FormatError::new(line_no, "expected 'p mc <n> <m>' header").into());
    }
    let node_count = parse_field::<usize>(&mut parts, line_no, "node count")?;
    let edge_count = parse_field::<usize>(&mut parts, line_no, "edge count")?;

    let mut edges = Vec::with_capacity(edge_count);
    for (line_no, line) in lines {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("e") {
            return Err(FormatError::new(line_no, "expected 'e <u> <v> <w>'").into());
        }
        let u = parse_field::<usize>(&mut parts, line_no, "endpoint")?;
        let v = parse_field::<usize>(&mut parts, line_no, "endpoint")?;
        let w = parse_field::<f64>(&mut parts, line_no, "weight")?;
        edges.push((u, v, w));
    }
    if edges.len() != edge_count {
        return Err(FormatError::new(
            1,
            format!("header declares {} edges, found {}", edge_count, edges.len()),
        )
        .into());
    }
    Ok(WeightedGraph::build(node_count, &edges)?)
}

/// Serializes a solution into the `.sol` text format.
pub fn write_sol(objective: f64, labeling: &EdgeLabeling) -> String {
    let labels: Vec<&str> = labeling
        .as_slice()
        .iter()
        .map(|&cut| if cut { "1" } else { "0" })
        .collect();
    format!("s {}\n{}\n", objective, labels.join(" "))
}

/// Parses the `.sol` text format.
pub fn read_sol(text: &str) -> Result<(f64, EdgeLabeling), McgIoError> {
    let mut lines = content_lines(text);
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| FormatError::new(1, "missing 's <objective>' header"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("s") {
        return Err(FormatError::new(line_no, "expected 's <objective>' header").into());
    }
    let objective = parse_field::<f64>(&mut parts, line_no, "objective")?;
    let (line_no, labels_line) = lines
        .next()
        .ok_or_else(|| FormatError::new(line_no + 1, "missing label line"))?;
    let mut labels = Vec::new();
    for token in labels_line.split_whitespace() {
        match token {
            "0" => labels.push(false),
            "1" => labels.push(true),
            other => {
                return Err(
                    FormatError::new(line_no, format!("expected 0 or 1, found '{other}'")).into(),
                )
            }
        }
    }
    Ok((objective, EdgeLabeling::new(labels)))
}

/// Reads and parses an `.mcg` file.
pub fn read_mcg_file(path: &Path) -> Result<WeightedGraph, McgIoError> {
    read_mcg(&std::fs::read_to_string(path)?)
}

/// Reads and parses a `.sol` file.
pub fn read_sol_file(path: &Path) -> Result<(f64, EdgeLabeling), McgIoError> {
    read_sol(&std::fs::read_to_string(path)?)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line))
        .filter(|(_, line)| !line.trim_start().starts_with('#') && !line.trim().is_empty())
}

fn parse_field<'a, T: std::str::FromStr>(
    parts: &mut impl Iterator<Item = &'a str>,
    line: usize,
    what: &str,
) -> Result<T, FormatError> {
    let token = parts
        .next()
        .ok_or_else(|| FormatError::new(line, format!("missing {what}")))?;
    token
        .parse::<T>()
        .map_err(|_| FormatError::new(line, format!("invalid {what} '{token}'")))
}
