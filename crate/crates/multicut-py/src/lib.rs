//! Python bindings for the multicut workbench: instances, solvers, cycle
//! machinery, dataset generators, and learned-model inference.

use multicut::cycles::enumerate_chordless_cycles;
use multicut::datasets::{generate, DatasetSpec, GeneratorKind, LabelMode};
use multicut::gnn;
use multicut::graph::{self, CutProbabilities, EdgeLabeling, WeightedGraph};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use std::time::Duration;

fn value_error(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn labeling_from(labels: Vec<bool>) -> EdgeLabeling {
    EdgeLabeling::new(labels)
}

/// A multicut instance: a simple, connected graph with real edge weights.
#[pyclass(name = "Graph", from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: WeightedGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(node_count: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Ok(PyGraph {
            inner: graph::build_graph(node_count, &edges).map_err(value_error)?,
        })
    }

    /// Parse the `.mcg` text format.
    #[staticmethod]
    fn from_mcg(text: &str) -> PyResult<Self> {
        Ok(PyGraph {
            inner: graph::read_mcg(text).map_err(value_error)?,
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    /// Edge list as (u, v, weight) tuples in index order.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner
            .edges()
            .iter()
            .map(|e| (e.u, e.v, e.weight))
            .collect()
    }

    /// Serialize to the `.mcg` text format.
    fn to_mcg(&self) -> String {
        graph::write_mcg(&self.inner)
    }

    /// Objective of a binary edge labeling (1 = cut).
    fn cost(&self, labels: Vec<bool>) -> PyResult<f64> {
        graph::multicut_cost(&self.inner, &labeling_from(labels)).map_err(value_error)
    }

    /// Whether a labeling satisfies every cycle inequality.
    fn is_feasible(&self, labels: Vec<bool>) -> PyResult<bool> {
        graph::is_feasible(&self.inner, &labeling_from(labels)).map_err(value_error)
    }

    /// Component id per node for the subgraph of uncut edges.
    fn connected_components(&self, labels: Vec<bool>) -> PyResult<Vec<usize>> {
        Ok(
            graph::connected_components(&self.inner, &labeling_from(labels))
                .map_err(value_error)?
                .ids()
                .to_vec(),
        )
    }

    /// All chordless cycles up to `max_length`, as edge-index lists.
    fn chordless_cycles(&self, max_length: usize) -> PyResult<Vec<Vec<usize>>> {
        Ok(enumerate_chordless_cycles(&self.inner, max_length)
            .map_err(value_error)?
            .cycles()
            .to_vec())
    }

    /// Threshold probabilities at 0.5 and repair to a feasible labeling.
    fn round_to_feasible(&self, probs: Vec<f64>) -> PyResult<Vec<bool>> {
        let probs = CutProbabilities::new(probs).map_err(value_error)?;
        if probs.len() != self.inner.edge_count() {
            return Err(value_error("probability vector length must match edge count"));
        }
        Ok(gnn::round_to_feasible(&self.inner, &probs).as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(node_count={}, edge_count={})",
            self.inner.node_count(),
            self.inner.edge_count()
        )
    }
}

/// Result of a solver run.
#[pyclass(name = "SolveResult")]
struct PySolveResult {
    #[pyo3(get)]
    labels: Vec<bool>,
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    wall_time: f64,
    #[pyo3(get)]
    status: String,
}

fn wrap_result(result: multicut::solvers::SolveResult) -> PySolveResult {
    PySolveResult {
        labels: result.labeling.as_slice().to_vec(),
        objective: result.objective,
        wall_time: result.wall_time,
        status: match result.status {
            multicut::solvers::SolveStatus::Optimal => "optimal".into(),
            multicut::solvers::SolveStatus::Heuristic => "heuristic".into(),
            multicut::solvers::SolveStatus::BudgetExpired => "budget_expired".into(),
        },
    }
}

/// Globally minimal multicut by set-partition enumeration.
#[pyfunction]
fn solve_exact(graph: &PyGraph) -> PyResult<PySolveResult> {
    Ok(wrap_result(
        multicut::solvers::exact_partition_solver(&graph.inner).map_err(value_error)?,
    ))
}

/// Greedy additive edge contraction, optionally time-bounded (seconds).
#[pyfunction]
#[pyo3(signature = (graph, budget=None))]
fn solve_gaec(graph: &PyGraph, budget: Option<f64>) -> PySolveResult {
    wrap_result(multicut::solvers::gaec(
        &graph.inner,
        budget.map(Duration::from_secs_f64),
    ))
}

/// Learned-solver prediction.
#[pyclass(name = "Prediction")]
struct PyPrediction {
    #[pyo3(get)]
    labels: Vec<bool>,
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    probs: Vec<f64>,
    #[pyo3(get)]
    feasible_before_rounding: bool,
    /// Final node embeddings as a list of rows.
    #[pyo3(get)]
    node_embeddings: Vec<Vec<f64>>,
}

/// The trainable signed-Laplacian message-passing solver.
#[pyclass(name = "Model")]
struct PyModel {
    inner: gnn::ModelParams,
}

#[pymethods]
impl PyModel {
    /// Load a checkpoint file written by the trainer.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: gnn::load_model_file(std::path::Path::new(path)).map_err(value_error)?,
        })
    }

    /// Parse a checkpoint from its JSON text.
    #[staticmethod]
    fn loads(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: gnn::load_model(text).map_err(value_error)?,
        })
    }

    /// Fresh Glorot-initialized model (untrained).
    #[staticmethod]
    #[pyo3(signature = (backbone="gcn_w", depth=4, width=32, batch_norm=true, seed=0))]
    fn new_random(
        backbone: &str,
        depth: usize,
        width: usize,
        batch_norm: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let backbone = match backbone {
            "gcn_w" => gnn::Backbone::GcnW,
            "gin_w" => gnn::Backbone::GinW,
            other => return Err(value_error(format!("unknown backbone '{other}'"))),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(PyModel {
            inner: gnn::ModelParams::new(backbone, depth, width, batch_norm, &mut rng),
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    /// Checkpoint JSON.
    fn dumps(&self) -> String {
        gnn::save_model(&self.inner)
    }

    /// Single forward pass plus feasibility rounding.
    fn predict(&self, graph: &PyGraph) -> PyResult<PyPrediction> {
        let prediction = gnn::predict(&self.inner, &graph.inner).map_err(value_error)?;
        let h = &prediction.node_embeddings;
        Ok(PyPrediction {
            labels: prediction.labeling.as_slice().to_vec(),
            objective: prediction.objective,
            probs: prediction.probs.as_slice().to_vec(),
            feasible_before_rounding: prediction.feasible_before_rounding,
            node_embeddings: (0..h.rows()).map(|r| h.row(r).to_vec()).collect(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(backbone={:?}, depth={}, width={})",
            self.inner.backbone, self.inner.depth, self.inner.width
        )
    }
}

/// One generated instance with optional ground truth.
#[pyclass(name = "Instance")]
struct PyInstance {
    #[pyo3(get)]
    graph: Py<PyGraph>,
    #[pyo3(get)]
    optimal_labels: Option<Vec<bool>>,
    #[pyo3(get)]
    optimal_cost: Option<f64>,
}

/// Generate a synthetic dataset in memory.
///
/// `kind` is one of irismp, irismp-s, randommp, randommp-s; `label` is
/// exact, gaec, or none.
#[pyfunction]
#[pyo3(signature = (kind, count, seed=0, label="none", exact_cap=12))]
fn generate_dataset(
    py: Python<'_>,
    kind: &str,
    count: usize,
    seed: u64,
    label: &str,
    exact_cap: usize,
) -> PyResult<Vec<PyInstance>> {
    let kind = match kind {
        "irismp" => GeneratorKind::irismp(),
        "irismp-s" => GeneratorKind::irismp_s(),
        "randommp" => GeneratorKind::randommp(),
        "randommp-s" => GeneratorKind::randommp_s(),
        other => return Err(value_error(format!("unknown kind '{other}'"))),
    };
    let label_mode = match label {
        "exact" => LabelMode::Exact,
        "gaec" => LabelMode::Gaec,
        "none" => LabelMode::None,
        other => return Err(value_error(format!("unknown label mode '{other}'"))),
    };
    let instances = generate(&DatasetSpec {
        kind,
        count,
        seed,
        label_mode,
        exact_cap,
    })
    .map_err(value_error)?;
    instances
        .into_iter()
        .map(|inst| {
            Ok(PyInstance {
                graph: Py::new(py, PyGraph { inner: inst.graph })?,
                optimal_labels: inst.optimal_labeling.map(|y| y.as_slice().to_vec()),
                optimal_cost: inst.optimal_cost,
            })
        })
        .collect()
}

/// A random kNN scaling graph with the given node count.
#[pyfunction]
#[pyo3(signature = (nodes, seed=0))]
fn scaling_graph(nodes: usize, seed: u64) -> PyGraph {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    PyGraph {
        inner: multicut::datasets::generate_scaling_graph(nodes, &mut rng),
    }
}

/// Quality metric max(0, cost / optimal) clamped to [0, 1].
#[pyfunction]
fn optimal_objective_ratio(cost: f64, optimal_cost: f64) -> f64 {
    graph::optimal_objective_ratio(cost, optimal_cost)
}

/// Harmonic mean of ratios; 0 as soon as any ratio is 0.
#[pyfunction]
fn harmonic_mean(ratios: Vec<f64>) -> PyResult<f64> {
    graph::harmonic_mean(&ratios).map_err(value_error)
}

#[pymodule]
fn multicut_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PySolveResult>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPrediction>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(solve_exact, m)?)?;
    m.add_function(wrap_pyfunction!(solve_gaec, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_graph, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_objective_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    Ok(())
}
