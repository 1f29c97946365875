//! Exact multicut solvers and the GAEC contraction heuristic.
//!
//! Two independent exact implementations are provided: set-partition
//! enumeration over restricted-growth strings (the solver) and brute-force
//! enumeration of all edge labelings (the oracle it is cross-checked
//! against). GAEC greedily contracts the maximum-weight edge while that
//! maximum is positive, optionally under a wall-clock budget.

use crate::graph::{
    labeling_from_partition, multicut_cost, EdgeLabeling, NodePartition, UnionFind, WeightedGraph,
};
use std::collections::HashMap;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Default node cap for [`exact_partition_solver`]; Bell(12) ≈ 4.2M
/// partitions keeps the oracle suites fast.
pub const DEFAULT_EXACT_NODE_CAP: usize = 12;

/// Edge cap for [`exact_edge_label_oracle`] (2^22 labelings).
pub const EDGE_ORACLE_CAP: usize = 22;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("instance too large: {size} {unit} exceeds cap {cap}")]
    TooLarge {
        size: usize,
        cap: usize,
        unit: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Heuristic,
    BudgetExpired,
}

/// A solver outcome: a feasible labeling, its objective, and wall-clock
/// time of the solve span (file I/O excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub labeling: EdgeLabeling,
    pub objective: f64,
    pub wall_time: f64,
    pub status: SolveStatus,
}

/// Globally minimal multicut by enumerating all set partitions in
/// restricted-growth-string order, with the default node cap.
pub fn exact_partition_solver(graph: &WeightedGraph) -> Result<SolveResult, SolverError> {
    exact_partition_solver_capped(graph, DEFAULT_EXACT_NODE_CAP)
}

/// Globally minimal multicut by enumerating all set partitions.
///
/// Partitions are visited in restricted-growth-string order and ties keep
/// the first minimum found. Branches whose partial cost plus the sum of
/// still-undecided negative weights cannot beat the incumbent are skipped;
/// this never discards a strictly better partition, so result and
/// tie-breaking are those of the full enumeration.
pub fn exact_partition_solver_capped(
    graph: &WeightedGraph,
    node_cap: usize,
) -> Result<SolveResult, SolverError> {
    let n = graph.node_count();
    if n > node_cap {
        return Err(SolverError::TooLarge {
            size: n,
            cap: node_cap,
            unit: "nodes",
        });
    }
    let start = Instant::now();

    // weight[v] lists (u, w) for edges {u, v} with u < v
    let mut lower_edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in graph.edges() {
        lower_edges[e.v].push((e.u, e.weight));
    }
    // remaining_negative[v] = sum of min(0, w) over edges whose larger
    // endpoint is >= v: a lower bound on the cost still to be decided once
    // nodes 0..v are assigned
    let mut remaining_negative = vec![0.0; n + 1];
    for v in (0..n).rev() {
        remaining_negative[v] = remaining_negative[v + 1]
            + lower_edges[v]
                .iter()
                .map(|&(_, w)| w.min(0.0))
                .sum::<f64>();
    }

    struct Search<'a> {
        lower_edges: &'a [Vec<(usize, f64)>],
        remaining_negative: &'a [f64],
        assignment: Vec<usize>,
        // per-recursion-level scratch for weights into each block
        level_scratch: Vec<Vec<f64>>,
        best_cost: f64,
        best_assignment: Vec<usize>,
    }

    impl Search<'_> {
        fn descend(&mut self, node: usize, block_count: usize, partial_cost: f64) {
            if partial_cost + self.remaining_negative[node] >= self.best_cost {
                return;
            }
            let n = self.assignment.len();
            if node == n {
                self.best_cost = partial_cost;
                self.best_assignment.copy_from_slice(&self.assignment);
                return;
            }
            // weight from `node` into each existing block
            let mut block_weight = std::mem::take(&mut self.level_scratch[node]);
            block_weight[..=block_count].fill(0.0);
            let mut total = 0.0;
            for &(u, w) in &self.lower_edges[node] {
                block_weight[self.assignment[u]] += w;
                total += w;
            }
            #[allow(clippy::needless_range_loop)]
            for b in 0..=block_count {
                self.assignment[node] = b;
                self.descend(
                    node + 1,
                    block_count.max(b + 1),
                    partial_cost + total - block_weight[b],
                );
            }
            self.level_scratch[node] = block_weight;
        }
    }

    let mut search = Search {
        lower_edges: &lower_edges,
        remaining_negative: &remaining_negative,
        assignment: vec![0; n],
        level_scratch: vec![vec![0.0; n + 1]; n],
        best_cost: f64::INFINITY,
        best_assignment: vec![0; n],
    };
    search.descend(0, 0, 0.0);

    let partition = NodePartition::from_raw_ids(&search.best_assignment);
    let labeling = labeling_from_partition(graph, &partition);
    let objective = multicut_cost(graph, &labeling).expect("labeling length matches");
    Ok(SolveResult {
        labeling,
        objective,
        wall_time: start.elapsed().as_secs_f64(),
        status: SolveStatus::Optimal,
    })
}

/// Independent exact oracle: enumerates all `2^m` edge labelings, keeps the
/// feasible ones, and returns the minimum-cost labeling (first such in mask
/// order).
pub fn exact_edge_label_oracle(graph: &WeightedGraph) -> Result<SolveResult, SolverError> {
    let m = graph.edge_count();
    if m > EDGE_ORACLE_CAP {
        return Err(SolverError::TooLarge {
            size: m,
            cap: EDGE_ORACLE_CAP,
            unit: "edges",
        });
    }
    let start = Instant::now();
    let n = graph.node_count();
    let mut best_cost = f64::INFINITY;
    let mut best_mask = 0u64;
    let mut uf = UnionFind::new(n);
    for mask in 0u64..(1 << m) {
        let mut cost = 0.0;
        for (e, edge) in graph.edges().iter().enumerate() {
            if mask >> e & 1 == 1 {
                cost += edge.weight;
            }
        }
        if cost >= best_cost {
            continue;
        }
        // feasible iff every cut edge crosses components of kept edges
        uf.reset();
        for (e, edge) in graph.edges().iter().enumerate() {
            if mask >> e & 1 == 0 {
                uf.union(edge.u, edge.v);
            }
        }
        let feasible = graph
            .edges()
            .iter()
            .enumerate()
            .all(|(e, edge)| mask >> e & 1 == 0 || uf.find(edge.u) != uf.find(edge.v));
        if feasible {
            best_cost = cost;
            best_mask = mask;
        }
    }
    let labeling = EdgeLabeling::new((0..m).map(|e| best_mask >> e & 1 == 1).collect());
    let objective = multicut_cost(graph, &labeling).expect("labeling length matches");
    Ok(SolveResult {
        labeling,
        objective,
        wall_time: start.elapsed().as_secs_f64(),
        status: SolveStatus::Optimal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    weight: f64,
    u: usize,
    v: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // max-heap on weight; ties broken toward the smaller cluster pair
        // so contraction order is deterministic
        self.weight
            .total_cmp(&other.weight)
            .then_with(|| other.u.cmp(&self.u))
            .then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy Additive Edge Contraction: repeatedly contracts the currently
/// maximum-weight edge while that maximum is strictly positive, summing
/// parallel edge weights on merge.
///
/// Stale heap entries are invalidated lazily. With a `time_budget` the loop
/// stops early and returns the clusters formed so far with status
/// [`SolveStatus::BudgetExpired`].
pub fn gaec(graph: &WeightedGraph, time_budget: Option<Duration>) -> SolveResult {
    let start = Instant::now();
    let n = graph.node_count();
    let mut uf = UnionFind::new(n);
    // per-cluster neighbor weights, keyed by current representative
    let mut adj: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
    let mut heap = std::collections::BinaryHeap::with_capacity(graph.edge_count());
    for e in graph.edges() {
        adj[e.u].insert(e.v, e.weight);
        adj[e.v].insert(e.u, e.weight);
        heap.push(HeapEntry {
            weight: e.weight,
            u: e.u,
            v: e.v,
        });
    }

    let mut status = SolveStatus::Heuristic;
    while let Some(entry) = heap.peek().copied() {
        if entry.weight <= 0.0 {
            break;
        }
        if let Some(budget) = time_budget {
            if start.elapsed() >= budget {
                status = SolveStatus::BudgetExpired;
                break;
            }
        }
        heap.pop();
        let HeapEntry { weight, u, v } = entry;
        // stale if either endpoint was merged away or the weight changed
        if uf.find(u) != u || uf.find(v) != v || adj[u].get(&v) != Some(&weight) {
            continue;
        }
        let survivor = uf.union(u, v);
        let absorbed = u + v - survivor;
        adj[survivor].remove(&absorbed);
        let absorbed_adj = std::mem::take(&mut adj[absorbed]);
        for (nbr, w) in absorbed_adj {
            if nbr == survivor {
                continue;
            }
            adj[nbr].remove(&absorbed);
            let merged = adj[survivor].get(&nbr).copied().unwrap_or(0.0) + w;
            adj[survivor].insert(nbr, merged);
            adj[nbr].insert(survivor, merged);
            heap.push(HeapEntry {
                weight: merged,
                u: survivor.min(nbr),
                v: survivor.max(nbr),
            });
        }
    }

    let raw: Vec<usize> = (0..n).map(|x| uf.find(x)).collect();
    let partition = NodePartition::from_raw_ids(&raw);
    let labeling = labeling_from_partition(graph, &partition);
    let objective = multicut_cost(graph, &labeling).expect("labeling length matches");
    SolveResult {
        labeling,
        objective,
        wall_time: start.elapsed().as_secs_f64(),
        status,
    }
}

/// Verifies a solve result against its graph: the labeling must be feasible
/// and the stored objective must match the labeling's cost.
pub fn check_result(graph: &WeightedGraph, result: &SolveResult) -> bool {
    crate::graph::is_feasible(graph, &result.labeling).unwrap_or(false)
        && (multicut_cost(graph, &result.labeling).unwrap() - result.objective).abs() <= 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, connected_components};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;

    fn triangle() -> WeightedGraph {
        build_graph(3, &[(0, 1, -5.0), (1, 2, -5.0), (0, 2, 4.0)]).unwrap()
    }

    #[test]
    fn exact_on_triangle() {
        let g = triangle();
        let r = exact_partition_solver(&g).unwrap();
        assert_abs_diff_eq!(r.objective, -10.0);
        assert_eq!(r.labeling.as_slice(), &[true, true, false]);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(check_result(&g, &r));
    }

    #[test]
    fn exact_all_positive_joins_everything() {
        let g = build_graph(4, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (0, 3, 1.5)]).unwrap();
        let r = exact_partition_solver(&g).unwrap();
        assert_abs_diff_eq!(r.objective, 0.0);
        assert_eq!(r.labeling.cut_count(), 0);
    }

    #[test]
    fn exact_all_negative_complete_cuts_everything() {
        let g = build_graph(3, &[(0, 1, -1.0), (1, 2, -2.0), (0, 2, -3.0)]).unwrap();
        let r = exact_partition_solver(&g).unwrap();
        assert_abs_diff_eq!(r.objective, -6.0);
        assert_eq!(r.labeling.cut_count(), 3);
    }

    #[test]
    fn exact_rejects_oversized() {
        let edges: Vec<_> = (0..13).map(|i| (i, (i + 1) % 13, 1.0)).collect();
        let g = build_graph(13, &edges).unwrap();
        assert_eq!(
            exact_partition_solver(&g).unwrap_err(),
            SolverError::TooLarge {
                size: 13,
                cap: 12,
                unit: "nodes"
            }
        );
    }

    #[test]
    fn oracle_on_triangle() {
        let g = triangle();
        let r = exact_edge_label_oracle(&g).unwrap();
        assert_abs_diff_eq!(r.objective, -10.0);
        assert_eq!(r.labeling.as_slice(), &[true, true, false]);
    }

    #[test]
    fn oracle_on_tree_cuts_negative_edges() {
        let g = build_graph(3, &[(0, 1, -1.0), (1, 2, -1.0)]).unwrap();
        let r = exact_edge_label_oracle(&g).unwrap();
        assert_abs_diff_eq!(r.objective, -2.0);
        assert_eq!(r.labeling.cut_count(), 2);
    }

    #[test]
    fn oracle_positive_triangle_with_one_repulsion() {
        let g = build_graph(3, &[(0, 1, 3.0), (1, 2, 3.0), (0, 2, -5.0)]).unwrap();
        let r = exact_edge_label_oracle(&g).unwrap();
        // best: cut e01 and e02 -> -2 (cutting only e02 is infeasible)
        assert_abs_diff_eq!(r.objective, -2.0);
    }

    #[test]
    fn gaec_traces_triangle() {
        let g = triangle();
        let r = gaec(&g, None);
        // contracts e02 (w=4), merged parallel weight -10 stops the loop
        assert_abs_diff_eq!(r.objective, -10.0);
        assert_eq!(r.labeling.as_slice(), &[true, true, false]);
        assert_eq!(r.status, SolveStatus::Heuristic);
    }

    #[test]
    fn gaec_no_positive_weight_means_no_contraction() {
        let g = build_graph(3, &[(0, 1, -1.0), (1, 2, 0.0), (0, 2, -2.0)]).unwrap();
        let r = gaec(&g, None);
        // zero-weight edges do not contract
        assert_eq!(r.labeling.cut_count(), 3);
        assert_abs_diff_eq!(r.objective, -3.0);
    }

    #[test]
    fn gaec_merges_parallel_weights() {
        let g = build_graph(3, &[(0, 1, 3.0), (1, 2, 3.0), (0, 2, -5.0)]).unwrap();
        let r = gaec(&g, None);
        // contract e01 (ties broken toward smaller pair), merged weight -2 stops
        assert_abs_diff_eq!(r.objective, -2.0);
    }

    #[test]
    fn gaec_budget_expires() {
        let g = triangle();
        let r = gaec(&g, Some(Duration::from_secs(0)));
        assert_eq!(r.status, SolveStatus::BudgetExpired);
        assert!(check_result(&g, &r));
    }

    fn random_connected_graph(
        rng: &mut rand_chacha::ChaCha8Rng,
        max_nodes: usize,
        max_edges: usize,
    ) -> WeightedGraph {
        let n = rng.random_range(2..=max_nodes);
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        // random spanning tree first
        for v in 1..n {
            let u = rng.random_range(0..v);
            edges.push((u, v, rng.random_range(-10.0..10.0)));
        }
        let mut pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !edges.iter().any(|&(a, b, _)| (a, b) == (u, v)))
            .collect();
        pairs.shuffle(rng);
        let extra = rng.random_range(0..=pairs.len().min(max_edges.saturating_sub(edges.len())));
        for &(u, v) in pairs.iter().take(extra) {
            edges.push((u, v, rng.random_range(-10.0..10.0)));
        }
        build_graph(n, &edges).unwrap()
    }

    #[test]
    fn solvers_agree_on_random_graphs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let g = random_connected_graph(&mut rng, 7, 14);
            let a = exact_partition_solver(&g).unwrap();
            let b = exact_edge_label_oracle(&g).unwrap();
            assert!((a.objective - b.objective).abs() <= 1e-9);
            let h = gaec(&g, None);
            assert!(check_result(&g, &h));
            assert!(h.objective >= a.objective - 1e-9);
        }
    }

    #[test]
    fn gaec_never_beats_singletons_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let g = random_connected_graph(&mut rng, 10, 20);
            let r = gaec(&g, None);
            let all_cut = multicut_cost(&g, &EdgeLabeling::all_ones(g.edge_count())).unwrap();
            assert!(r.objective <= all_cut + 1e-9);
            if r.labeling.cut_count() == 0 {
                assert_abs_diff_eq!(r.objective, 0.0);
            }
        }
    }

    #[test]
    fn gaec_order_invariant_with_distinct_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let base = vec![
            (0, 1, 2.5),
            (1, 2, -1.0),
            (2, 3, 4.0),
            (0, 3, -0.5),
            (1, 3, 1.5),
            (0, 2, 3.0),
        ];
        let g = build_graph(4, &base).unwrap();
        let reference = connected_components(&g, &gaec(&g, None).labeling).unwrap();
        for _ in 0..10 {
            let mut shuffled = base.clone();
            shuffled.shuffle(&mut rng);
            let h = build_graph(4, &shuffled).unwrap();
            let partition = connected_components(&h, &gaec(&h, None).labeling).unwrap();
            assert_eq!(partition.ids(), reference.ids());
        }
    }
}
