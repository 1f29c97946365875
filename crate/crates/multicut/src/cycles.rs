//! Chordless-cycle enumeration and cycle-inequality checking.
//!
//! Feasible multicut labelings are exactly those where no cycle contains a
//! single cut edge, and it suffices to check the chordless cycles. On
//! complete graphs the chordless cycles are the triangles; on sparse graphs
//! they can be as long as the node count.

use crate::graph::{EdgeLabeling, GraphError, WeightedGraph};
use thiserror::Error;

/// Default cap on the number of stored cycles before enumeration aborts.
pub const DEFAULT_CYCLE_BUDGET: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycleError {
    #[error("cycle budget of {budget} exceeded; the instance is too dense for max length {max_length}")]
    BudgetExceeded { budget: usize, max_length: usize },
    #[error("maximum cycle length must be at least 3, got {got}")]
    MaxLengthTooSmall { got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// All chordless cycles of a graph up to a maximum length, stored as
/// edge-index sequences in canonical form.
///
/// Canonical form: the node walk starts at the cycle's smallest node,
/// proceeds toward its smaller neighbor, and cycles are sorted
/// lexicographically by that walk. Consecutive edges share a node, the
/// first and last edges share the start node, and no graph edge joins two
/// non-adjacent cycle nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChordlessCycleSet {
    max_length: usize,
    cycles: Vec<Vec<usize>>,
}

impl ChordlessCycleSet {
    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn cycles(&self) -> &[Vec<usize>] {
        &self.cycles
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }
}

/// Enumerates every chordless cycle of length at most `max_length` with the
/// default storage budget.
pub fn enumerate_chordless_cycles(
    graph: &WeightedGraph,
    max_length: usize,
) -> Result<ChordlessCycleSet, CycleError> {
    enumerate_chordless_cycles_with_budget(graph, max_length, DEFAULT_CYCLE_BUDGET)
}

/// Enumerates every chordless cycle of length at most `max_length`, failing
/// with [`CycleError::BudgetExceeded`] once more than `budget` cycles are
/// found.
///
/// The search grows DFS paths anchored at each node `s`, visiting only
/// nodes greater than `s`. A path is extended only to nodes with no edge to
/// any interior path node, so chordlessness holds by construction and no
/// post-hoc filtering is needed. A neighbor of `s` closes a cycle and is
/// never extended past, since the edge back to `s` would be a chord of any
/// longer cycle.
pub fn enumerate_chordless_cycles_with_budget(
    graph: &WeightedGraph,
    max_length: usize,
    budget: usize,
) -> Result<ChordlessCycleSet, CycleError> {
    if max_length < 3 {
        return Err(CycleError::MaxLengthTooSmall { got: max_length });
    }
    let n = graph.node_count();
    let mut found: Vec<Vec<usize>> = Vec::new();

    // scratch state shared across anchors
    let mut on_path = vec![false; n];
    // number of interior path nodes adjacent to each node
    let mut chord_count = vec![0usize; n];
    let mut adjacent_to_anchor = vec![false; n];
    let mut path: Vec<usize> = Vec::new();

    for anchor in 0..n {
        for &(nbr, _) in graph.neighbors(anchor) {
            adjacent_to_anchor[nbr] = true;
        }
        path.clear();
        path.push(anchor);
        on_path[anchor] = true;
        for &(first, _) in graph.neighbors(anchor) {
            if first <= anchor {
                continue;
            }
            path.push(first);
            on_path[first] = true;
            grow(
                graph,
                anchor,
                max_length,
                budget,
                &mut path,
                &mut on_path,
                &mut chord_count,
                &adjacent_to_anchor,
                &mut found,
            )?;
            on_path[first] = false;
            path.pop();
        }
        on_path[anchor] = false;
        for &(nbr, _) in graph.neighbors(anchor) {
            adjacent_to_anchor[nbr] = false;
        }
    }

    // node-walk lexicographic order makes the output independent of edge
    // input order
    let mut walks: Vec<(Vec<usize>, Vec<usize>)> = found
        .into_iter()
        .map(|walk| {
            let edges = walk_to_edges(graph, &walk);
            (walk, edges)
        })
        .collect();
    walks.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(ChordlessCycleSet {
        max_length,
        cycles: walks.into_iter().map(|(_, edges)| edges).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn grow(
    graph: &WeightedGraph,
    anchor: usize,
    max_length: usize,
    budget: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    chord_count: &mut [usize],
    adjacent_to_anchor: &[bool],
    found: &mut Vec<Vec<usize>>,
) -> Result<(), CycleError> {
    let last = *path.last().unwrap();
    for &(next, _) in graph.neighbors(last) {
        if next <= anchor || on_path[next] || chord_count[next] > 0 {
            continue;
        }
        if adjacent_to_anchor[next] {
            // closing edge; emit each cycle once, in the orientation whose
            // second node is the smaller anchor neighbor
            if path.len() >= 2 && next > path[1] {
                if found.len() == budget {
                    return Err(CycleError::BudgetExceeded { budget, max_length });
                }
                let mut walk = path.clone();
                walk.push(next);
                found.push(walk);
            }
        } else if path.len() + 1 < max_length {
            // `last` becomes interior: its neighbors gain a chord witness
            for &(x, _) in graph.neighbors(last) {
                chord_count[x] += 1;
            }
            path.push(next);
            on_path[next] = true;
            grow(
                graph,
                anchor,
                max_length,
                budget,
                path,
                on_path,
                chord_count,
                adjacent_to_anchor,
                found,
            )?;
            on_path[next] = false;
            path.pop();
            for &(x, _) in graph.neighbors(last) {
                chord_count[x] -= 1;
            }
        }
    }
    Ok(())
}

fn walk_to_edges(graph: &WeightedGraph, walk: &[usize]) -> Vec<usize> {
    let mut edges = Vec::with_capacity(walk.len());
    for i in 0..walk.len() {
        let u = walk[i];
        let v = walk[(i + 1) % walk.len()];
        edges.push(graph.find_edge(u, v).expect("cycle walk uses graph edges"));
    }
    edges
}

/// Number of cycles in the set containing exactly one cut edge — the
/// violated cycle inequalities under a binary labeling.
pub fn count_cycle_violations(
    graph: &WeightedGraph,
    labeling: &EdgeLabeling,
    cycle_set: &ChordlessCycleSet,
) -> Result<usize, GraphError> {
    if labeling.len() != graph.edge_count() {
        return Err(GraphError::LengthMismatch {
            expected: graph.edge_count(),
            got: labeling.len(),
        });
    }
    Ok(cycle_set
        .cycles()
        .iter()
        .filter(|cycle| cycle.iter().filter(|&&e| labeling.is_cut(e)).count() == 1)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, is_feasible};

    fn complete_graph(n: usize) -> WeightedGraph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                edges.push((u, v, 1.0));
            }
        }
        build_graph(n, &edges).unwrap()
    }

    /// Brute-force chordless cycle enumeration by checking every cyclic
    /// node sequence, independent of the DFS implementation.
    fn brute_force_chordless(graph: &WeightedGraph, max_length: usize) -> Vec<Vec<usize>> {
        let n = graph.node_count();
        let mut cycles = Vec::new();
        let mut nodes: Vec<usize> = Vec::new();
        fn extend(
            graph: &WeightedGraph,
            nodes: &mut Vec<usize>,
            max_length: usize,
            cycles: &mut Vec<Vec<usize>>,
        ) {
            let len = nodes.len();
            if len >= 3 && graph.find_edge(nodes[0], nodes[len - 1]).is_some() {
                // canonical orientation: second node smaller than last
                if nodes[1] < nodes[len - 1] && is_chordless(graph, nodes) {
                    cycles.push(nodes.clone());
                }
            }
            if len == max_length {
                return;
            }
            let last = nodes[len - 1];
            for next in (nodes[0] + 1)..graph.node_count() {
                if nodes.contains(&next) || graph.find_edge(last, next).is_none() {
                    continue;
                }
                nodes.push(next);
                extend(graph, nodes, max_length, cycles);
                nodes.pop();
            }
        }
        fn is_chordless(graph: &WeightedGraph, nodes: &[usize]) -> bool {
            let k = nodes.len();
            for i in 0..k {
                for j in (i + 1)..k {
                    let consecutive = j == i + 1 || (i == 0 && j == k - 1);
                    if !consecutive && graph.find_edge(nodes[i], nodes[j]).is_some() {
                        return false;
                    }
                }
            }
            true
        }
        for start in 0..n {
            nodes.clear();
            nodes.push(start);
            extend(graph, &mut nodes, max_length, &mut cycles);
        }
        cycles.sort();
        cycles
    }

    fn as_walks(graph: &WeightedGraph, set: &ChordlessCycleSet) -> Vec<Vec<usize>> {
        // recover node walks from canonical edge sequences, for comparison
        // against the node-based brute force
        set.cycles()
            .iter()
            .map(|edges| {
                let first = graph.edge(edges[0]);
                let second = graph.edge(edges[1]);
                let shared = if first.u == second.u || first.u == second.v {
                    first.u
                } else {
                    first.v
                };
                let mut walk = vec![first.u + first.v - shared, shared];
                for &e in &edges[1..edges.len() - 1] {
                    let edge = graph.edge(e);
                    let prev = *walk.last().unwrap();
                    walk.push(edge.u + edge.v - prev);
                }
                walk
            })
            .collect()
    }

    #[test]
    fn k4_triangles_only() {
        let g = complete_graph(4);
        let set = enumerate_chordless_cycles(&g, 3).unwrap();
        assert_eq!(set.len(), 4);
        // every 4-cycle in K4 has a chord, so raising the bound adds nothing
        let set4 = enumerate_chordless_cycles(&g, 4).unwrap();
        assert_eq!(set4.len(), 4);
        assert_eq!(set.cycles(), set4.cycles());
    }

    #[test]
    fn tree_has_no_cycles() {
        let g = build_graph(5, &[(0, 1, 1.0), (1, 2, 1.0), (1, 3, -2.0), (3, 4, 1.0)]).unwrap();
        for l in [3, 5, 10] {
            assert!(enumerate_chordless_cycles(&g, l).unwrap().is_empty());
        }
    }

    #[test]
    fn square_with_diagonal() {
        // 0-1-2-3-0 plus diagonal 0-2: chordless cycles are the two triangles
        let g = build_graph(
            4,
            &[
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (0, 3, 1.0),
                (0, 2, 1.0),
            ],
        )
        .unwrap();
        let set = enumerate_chordless_cycles(&g, 4).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn long_cycle_found_up_to_length_bound() {
        // plain 6-cycle: one chordless cycle of length 6
        let g = build_graph(
            6,
            &[
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (3, 4, 1.0),
                (4, 5, 1.0),
                (0, 5, 1.0),
            ],
        )
        .unwrap();
        assert!(enumerate_chordless_cycles(&g, 5).unwrap().is_empty());
        let set = enumerate_chordless_cycles(&g, 6).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.cycles()[0].len(), 6);
    }

    #[test]
    fn rejects_max_length_below_three() {
        let g = complete_graph(3);
        assert_eq!(
            enumerate_chordless_cycles(&g, 2).unwrap_err(),
            CycleError::MaxLengthTooSmall { got: 2 }
        );
    }

    #[test]
    fn budget_exceeded_reports_error() {
        let g = complete_graph(6); // 20 triangles
        let err = enumerate_chordless_cycles_with_budget(&g, 3, 10).unwrap_err();
        assert_eq!(
            err,
            CycleError::BudgetExceeded {
                budget: 10,
                max_length: 3
            }
        );
    }

    #[test]
    fn matches_brute_force_on_small_graphs() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let n = rng.random_range(3..=7usize);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if u + 1 == v || rng.random_bool(0.5) {
                        edges.push((u, v, 1.0));
                    }
                }
            }
            let g = build_graph(n, &edges).unwrap();
            for l in [3, 4, n] {
                let set = enumerate_chordless_cycles(&g, l).unwrap();
                let walks = as_walks(&g, &set);
                assert_eq!(walks, brute_force_chordless(&g, l), "n={n} l={l}");
            }
        }
    }

    #[test]
    fn output_independent_of_edge_order() {
        use rand::prelude::*;
        let base = vec![
            (0, 1, 1.0),
            (1, 2, 1.0),
            (2, 3, 1.0),
            (0, 3, 1.0),
            (1, 3, 1.0),
            (0, 4, 1.0),
            (2, 4, 1.0),
        ];
        let g = build_graph(5, &base).unwrap();
        let reference = as_walks(&g, &enumerate_chordless_cycles(&g, 5).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut shuffled = base.clone();
            shuffled.shuffle(&mut rng);
            let h = build_graph(5, &shuffled).unwrap();
            let walks = as_walks(&h, &enumerate_chordless_cycles(&h, 5).unwrap());
            assert_eq!(walks, reference);
        }
    }

    #[test]
    fn violation_counts_on_triangle() {
        let g = complete_graph(3);
        let set = enumerate_chordless_cycles(&g, 3).unwrap();
        let one_cut = EdgeLabeling::new(vec![true, false, false]);
        assert_eq!(count_cycle_violations(&g, &one_cut, &set).unwrap(), 1);
        let two_cut = EdgeLabeling::new(vec![true, true, false]);
        assert_eq!(count_cycle_violations(&g, &two_cut, &set).unwrap(), 0);
    }

    #[test]
    fn star_cut_in_k4_is_consistent() {
        let g = complete_graph(4);
        let set = enumerate_chordless_cycles(&g, 3).unwrap();
        // cut the three edges incident to node 0
        let labels: Vec<bool> = g.edges().iter().map(|e| e.u == 0 || e.v == 0).collect();
        let y = EdgeLabeling::new(labels);
        assert_eq!(count_cycle_violations(&g, &y, &set).unwrap(), 0);
        assert!(is_feasible(&g, &y).unwrap());
    }

    #[test]
    fn violations_zero_iff_feasible_on_k5() {
        let g = complete_graph(5);
        let set = enumerate_chordless_cycles(&g, 3).unwrap();
        let m = g.edge_count();
        for mask in 0u32..(1 << m) {
            let y = EdgeLabeling::new((0..m).map(|e| mask >> e & 1 == 1).collect());
            let feasible = is_feasible(&g, &y).unwrap();
            let violations = count_cycle_violations(&g, &y, &set).unwrap();
            assert_eq!(feasible, violations == 0, "mask {mask:b}");
        }
    }
}
