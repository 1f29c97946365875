//! Benchmark records and CSV reporting.
//!
//! Wall-clock times cover the solver span only (no file I/O). Quality is
//! the optimal objective ratio against ground truth when present, and
//! datasets are summarized by mean and harmonic mean.

use crate::datasets::LabeledInstance;
use crate::gnn::{self, ModelParams};
use crate::graph::{harmonic_mean, optimal_objective_ratio, WeightedGraph};
use crate::solvers::{exact_partition_solver, gaec, SolveResult, SolveStatus, SolverError};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Duration;

/// Version tag of the benchmark CSV schemas below.
pub const BENCH_CSV_VERSION: u32 = 1;

/// Header of per-instance benchmark CSV files.
pub const BENCH_CSV_HEADER: &str =
    "instance,solver,objective,ratio,feasible_before_rounding,wall_time_s,status";

/// Header of scaling-study CSV files.
pub const SCALE_CSV_HEADER: &str = "nodes,solver,wall_time_s,objective,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Gaec,
    Gnn,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::Gaec => "gaec",
            SolverKind::Gnn => "gnn",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(SolverKind::Exact),
            "gaec" => Ok(SolverKind::Gaec),
            "gnn" => Ok(SolverKind::Gnn),
            other => Err(format!("unknown solver '{other}' (exact|gaec|gnn)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Gnn(#[from] gnn::GnnError),
    #[error("solver 'gnn' needs a model checkpoint")]
    MissingModel,
}

/// One solver run on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance: String,
    pub solver: String,
    pub objective: f64,
    /// Optimal objective ratio; absent without ground truth.
    pub ratio: Option<f64>,
    /// Whether the thresholded output was already feasible (learned solver
    /// only).
    pub feasible_before_rounding: Option<bool>,
    pub wall_time: f64,
    pub status: SolveStatus,
}

/// Dispatches one instance to a solver. Returns the solve result and, for
/// the learned solver, the feasibility-before-rounding flag.
pub fn run_solver(
    kind: SolverKind,
    graph: &WeightedGraph,
    model: Option<&ModelParams>,
    budget: Option<Duration>,
) -> Result<(SolveResult, Option<bool>), BenchError> {
    match kind {
        SolverKind::Exact => Ok((exact_partition_solver(graph)?, None)),
        SolverKind::Gaec => Ok((gaec(graph, budget), None)),
        SolverKind::Gnn => {
            let model = model.ok_or(BenchError::MissingModel)?;
            let start = std::time::Instant::now();
            let prediction = gnn::predict(model, graph)?;
            let wall_time = start.elapsed().as_secs_f64();
            Ok((
                SolveResult {
                    labeling: prediction.labeling,
                    objective: prediction.objective,
                    wall_time,
                    status: SolveStatus::Heuristic,
                },
                Some(prediction.feasible_before_rounding),
            ))
        }
    }
}

/// Benchmarks one labeled instance; the ratio is filled in when ground
/// truth is present.
pub fn bench_instance(
    kind: SolverKind,
    instance: &LabeledInstance,
    instance_id: String,
    model: Option<&ModelParams>,
    budget: Option<Duration>,
) -> Result<BenchRecord, BenchError> {
    let (result, feasible_before_rounding) = run_solver(kind, &instance.graph, model, budget)?;
    let ratio = instance
        .optimal_cost
        .map(|opt| optimal_objective_ratio(result.objective, opt));
    Ok(BenchRecord {
        instance: instance_id,
        solver: kind.name().to_string(),
        objective: result.objective,
        ratio,
        feasible_before_rounding,
        wall_time: result.wall_time,
        status: result.status,
    })
}

fn status_str(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Heuristic => "heuristic",
        SolveStatus::BudgetExpired => "budget_expired",
    }
}

/// Per-instance rows followed by a summary row with the mean and harmonic
/// mean ratio across the dataset.
pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.instance,
            r.solver,
            r.objective,
            r.ratio.map_or(String::new(), |v| v.to_string()),
            r.feasible_before_rounding
                .map_or(String::new(), |v| v.to_string()),
            r.wall_time,
            status_str(r.status)
        );
    }
    let ratios: Vec<f64> = records.iter().filter_map(|r| r.ratio).collect();
    if !ratios.is_empty() {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let hmean = harmonic_mean(&ratios).expect("non-empty");
        let _ = writeln!(out, "summary,mean,{mean},,,,");
        let _ = writeln!(out, "summary,harmonic_mean,{hmean},,,,");
    }
    out
}

/// One point of the scaling study: median wall time over the repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRecord {
    pub nodes: usize,
    pub solver: String,
    /// Median over the repeat runs; absent when the solver refused the
    /// size.
    pub wall_time: Option<f64>,
    pub objective: Option<f64>,
    pub status: String,
}

/// Runs a solver on one scaling graph `repeats` times and reports the
/// median wall time (solve span only).
pub fn scale_point(
    kind: SolverKind,
    graph: &WeightedGraph,
    model: Option<&ModelParams>,
    repeats: usize,
) -> ScaleRecord {
    let mut times = Vec::with_capacity(repeats);
    let mut objective = None;
    let mut status = String::new();
    for _ in 0..repeats.max(1) {
        match run_solver(kind, graph, model, None) {
            Ok((result, _)) => {
                times.push(result.wall_time);
                objective = Some(result.objective);
                status = status_str(result.status).to_string();
            }
            Err(err) => {
                // refusal becomes a row, not a crash
                return ScaleRecord {
                    nodes: graph.node_count(),
                    solver: kind.name().to_string(),
                    wall_time: None,
                    objective: None,
                    status: match err {
                        BenchError::Solver(SolverError::TooLarge { .. }) => "too_large".into(),
                        other => format!("error: {other}"),
                    },
                };
            }
        }
    }
    times.sort_by(f64::total_cmp);
    ScaleRecord {
        nodes: graph.node_count(),
        solver: kind.name().to_string(),
        wall_time: Some(times[times.len() / 2]),
        objective,
        status,
    }
}

pub fn scale_records_to_csv(records: &[ScaleRecord]) -> String {
    let mut out = String::from(SCALE_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.nodes,
            r.solver,
            r.wall_time.map_or(String::new(), |v| v.to_string()),
            r.objective.map_or(String::new(), |v| v.to_string()),
            r.status
        );
    }
    out
}
