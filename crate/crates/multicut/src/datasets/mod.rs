//! Synthetic instance generators and dataset serialization.
//!
//! Two instance families with complementary connectivity: IrisMP builds
//! complete graphs over points sampled from the embedded Iris table, with
//! weights from a Gaussian similarity kernel passed through the logit;
//! RandomMP builds sparse kNN graphs over uniform points in the unit
//! square, with median-centered distance weights. Scaling graphs reuse the
//! RandomMP recipe at a fixed node count. Instances can be labeled with
//! ground truth from the exact solver or with GAEC output.

mod gen;
mod io;
mod iris;

pub use gen::{
    generate, generate_instance_graph, generate_scaling_graph, label_instances, DatasetSpec,
    GeneratorKind, IrisParams, RandomParams, SIMILARITY_CLAMP,
};
pub use io::{
    dataset_stats, read_dataset, write_dataset, Conventions, DatasetStats, Manifest,
    MANIFEST_VERSION,
};
pub use iris::IRIS_TABLE;

use crate::graph::{EdgeLabeling, GraphError, McgIoError, WeightedGraph};
use crate::solvers::SolverError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mcg(#[from] McgIoError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("manifest: {reason}")]
    Manifest { reason: String },
}

/// Where an instance's labeling came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Ground-truth optimum from the exact partition solver.
    Exact,
    /// GAEC output: feasible but possibly suboptimal supervision.
    Gaec,
    #[default]
    None,
}

/// A multicut instance with optional ground-truth solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub graph: WeightedGraph,
    pub optimal_labeling: Option<EdgeLabeling>,
    pub optimal_cost: Option<f64>,
    pub label_source: LabelMode,
}

impl LabeledInstance {
    pub fn unlabeled(graph: WeightedGraph) -> Self {
        LabeledInstance {
            graph,
            optimal_labeling: None,
            optimal_cost: None,
            label_source: LabelMode::None,
        }
    }
}
