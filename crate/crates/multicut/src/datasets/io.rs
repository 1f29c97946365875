//! Dataset directory layout and the manifest schema.
//!
//! A dataset directory holds one `NNNNNN.mcg` instance file per graph (and
//! `NNNNNN.sol` when labeled) plus `manifest.json`. The manifest records
//! the generation spec, summary statistics, and the generator conventions
//! that are not fixed by the recipe's one-line description (kernel form,
//! similarity clamp, sampling mode, sign convention, connectivity repair).
//! The schema is versioned through `format_version`.

use super::gen::{DatasetSpec, GeneratorKind};
use super::{DatasetError, LabelMode, LabeledInstance};
use crate::graph::{
    is_feasible, multicut_cost, read_mcg, read_sol, write_mcg, write_sol,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MANIFEST_VERSION: u32 = 1;

/// Per-dataset summary statistics (means over instances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean_nodes: f64,
    pub sd_nodes: f64,
    pub mean_edges: f64,
    pub sd_edges: f64,
    pub mean_min_weight: f64,
    pub mean_avg_weight: f64,
    pub mean_max_weight: f64,
    pub negative_weight_fraction: f64,
}

/// Generator conventions fixed by this implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    /// Distance-to-similarity kernel of the complete-graph family.
    pub iris_kernel: String,
    /// Similarity clamp applied before the logit.
    pub iris_similarity_clamp: [f64; 2],
    /// Iris rows are drawn with replacement.
    pub iris_point_sampling: String,
    /// Distances are median-centered, then negated so close pairs attract.
    pub random_weight_sign: String,
    /// The minimum-neighbor constraint alone does not guarantee
    /// connectivity; disconnected unions are repaired by bridging.
    pub connectivity_repair: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            iris_kernel: "exp(-d^2 / (2 * sigma^2))".into(),
            iris_similarity_clamp: [
                super::gen::SIMILARITY_CLAMP,
                1.0 - super::gen::SIMILARITY_CLAMP,
            ],
            iris_point_sampling: "with_replacement".into(),
            random_weight_sign: "median_subtracted_then_negated".into(),
            connectivity_repair: "greedy_minimum_distance_bridging".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub count: usize,
    pub seed: u64,
    pub label_mode: LabelMode,
    pub generator: GeneratorKind,
    pub exact_cap: usize,
    pub stats: DatasetStats,
    pub conventions: Conventions,
}

/// Summary statistics over a set of instances.
pub fn dataset_stats(instances: &[LabeledInstance]) -> DatasetStats {
    let n = instances.len() as f64;
    let nodes: Vec<f64> = instances.iter().map(|i| i.graph.node_count() as f64).collect();
    let edges: Vec<f64> = instances.iter().map(|i| i.graph.edge_count() as f64).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
    let sd = |xs: &[f64], m: f64| (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    let mean_nodes = mean(&nodes);
    let mean_edges = mean(&edges);
    let mut min_sum = 0.0;
    let mut avg_sum = 0.0;
    let mut max_sum = 0.0;
    let mut negative = 0usize;
    let mut total_edges = 0usize;
    for inst in instances {
        let weights: Vec<f64> = inst.graph.edges().iter().map(|e| e.weight).collect();
        min_sum += weights.iter().copied().fold(f64::INFINITY, f64::min);
        max_sum += weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        avg_sum += weights.iter().sum::<f64>() / weights.len() as f64;
        negative += weights.iter().filter(|&&w| w < 0.0).count();
        total_edges += weights.len();
    }
    DatasetStats {
        mean_nodes,
        sd_nodes: sd(&nodes, mean_nodes),
        mean_edges,
        sd_edges: sd(&edges, mean_edges),
        mean_min_weight: min_sum / n,
        mean_avg_weight: avg_sum / n,
        mean_max_weight: max_sum / n,
        negative_weight_fraction: negative as f64 / total_edges as f64,
    }
}

fn instance_basename(index: usize) -> String {
    format!("{index:06}")
}

/// Writes instances and the manifest into `dir` (created if missing).
pub fn write_dataset(
    dir: &Path,
    instances: &[LabeledInstance],
    spec: &DatasetSpec,
) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(dir)?;
    for (index, inst) in instances.iter().enumerate() {
        let base = instance_basename(index);
        std::fs::write(dir.join(format!("{base}.mcg")), write_mcg(&inst.graph))?;
        if let (Some(labeling), Some(cost)) = (&inst.optimal_labeling, inst.optimal_cost) {
            std::fs::write(dir.join(format!("{base}.sol")), write_sol(cost, labeling))?;
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        kind: spec.kind.name().to_string(),
        count: instances.len(),
        seed: spec.seed,
        label_mode: spec.label_mode,
        generator: spec.kind,
        exact_cap: spec.exact_cap,
        stats: dataset_stats(instances),
        conventions: Conventions::default(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

/// Reads a dataset directory back; solutions are validated for feasibility
/// and cost consistency.
pub fn read_dataset(dir: &Path) -> Result<(Vec<LabeledInstance>, Manifest), DatasetError> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| {
        DatasetError::Manifest {
            reason: format!("{}: {e}", dir.join("manifest.json").display()),
        }
    })?;
    let manifest: Manifest =
        serde_json::from_str(&manifest_text).map_err(|e| DatasetError::Manifest {
            reason: e.to_string(),
        })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(DatasetError::Manifest {
            reason: format!("unsupported manifest version {}", manifest.format_version),
        });
    }
    let mut instances = Vec::with_capacity(manifest.count);
    for index in 0..manifest.count {
        let base = instance_basename(index);
        let graph = read_mcg(&std::fs::read_to_string(dir.join(format!("{base}.mcg")))?)?;
        let sol_path = dir.join(format!("{base}.sol"));
        let (labeling, cost, source) = if sol_path.exists() {
            let (objective, labeling) = read_sol(&std::fs::read_to_string(&sol_path)?)?;
            if !is_feasible(&graph, &labeling)? {
                return Err(DatasetError::Manifest {
                    reason: format!("{base}.sol holds an infeasible labeling"),
                });
            }
            let cost = multicut_cost(&graph, &labeling)?;
            if (cost - objective).abs() > 1e-9 {
                return Err(DatasetError::Manifest {
                    reason: format!(
                        "{base}.sol objective {objective} does not match labeling cost {cost}"
                    ),
                });
            }
            (Some(labeling), Some(objective), manifest.label_mode)
        } else {
            (None, None, LabelMode::None)
        };
        instances.push(LabeledInstance {
            graph,
            optimal_labeling: labeling,
            optimal_cost: cost,
            label_source: source,
        });
    }
    Ok((instances, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            kind: GeneratorKind::irismp_s(),
            count: 4,
            seed: 5,
            label_mode: LabelMode::Exact,
            exact_cap: 12,
        }
    }

    #[test]
    fn dataset_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let instances = generate(&spec()).unwrap();
        let manifest = write_dataset(dir.path(), &instances, &spec()).unwrap();
        assert_eq!(manifest.kind, "irismp-s");
        let (loaded, loaded_manifest) = read_dataset(dir.path()).unwrap();
        assert_eq!(loaded, instances);
        assert_eq!(loaded_manifest, manifest);

        // re-serialization reproduces every byte
        let second = tempfile::tempdir().unwrap();
        write_dataset(second.path(), &loaded, &spec()).unwrap();
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(dir.path().join(&name)).unwrap();
            let b = std::fs::read(second.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs");
        }
    }

    #[test]
    fn corrupt_header_reports_line_one() {
        let dir = tempfile::tempdir().unwrap();
        let instances = generate(&spec()).unwrap();
        write_dataset(dir.path(), &instances, &spec()).unwrap();
        std::fs::write(dir.path().join("000000.mcg"), "bogus header\ne 0 1 1\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 1"), "unexpected error: {text}");
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_dataset(dir.path()).unwrap_err(),
            DatasetError::Manifest { .. }
        ));
    }

    #[test]
    fn stats_are_plausible_for_iris() {
        let instances = generate(&DatasetSpec {
            kind: GeneratorKind::irismp_s(),
            count: 20,
            seed: 3,
            label_mode: LabelMode::None,
            exact_cap: 12,
        })
        .unwrap();
        let stats = dataset_stats(&instances);
        assert!((8.0..=11.0).contains(&stats.mean_nodes));
        assert!(stats.mean_max_weight > 0.0);
        assert!(stats.mean_min_weight < 0.0);
    }
}
