//! Multicut instance representation, cost evaluation, feasibility semantics,
//! partitions, and evaluation metrics.

use thiserror::Error;

mod io;
pub use io::{
    read_mcg, read_mcg_file, read_sol, read_sol_file, write_mcg, write_sol, FormatError,
    McgIoError,
};

/// Errors raised by graph construction and the operations on labelings.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {index} is a self-loop at node {node}")]
    SelfLoop { index: usize, node: usize },
    #[error("edge {index} duplicates undirected edge {{{u}, {v}}}")]
    DuplicateEdge { index: usize, u: usize, v: usize },
    #[error("graph is disconnected: node {node} is not reachable from node 0")]
    Disconnected { node: usize },
    #[error("edge {index} endpoint {node} out of range for {node_count} nodes")]
    EndpointOutOfRange {
        index: usize,
        node: usize,
        node_count: usize,
    },
    #[error("edge {index} has non-finite weight")]
    NonFiniteWeight { index: usize },
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("labeling has {got} entries but the graph has {expected} edges")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
}

/// An undirected edge with canonical orientation `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// A multicut instance: a simple, connected graph with real edge weights.
///
/// Edges keep their input order (indexes are dense `0..m`), endpoints are
/// stored as `u < v`, and per-node degree sums are precomputed:
/// `pos_degree(u)` sums positive incident weights, `neg_degree(u)` sums
/// negative incident weights (a non-positive number), and `abs_degree(u)`
/// sums `|w|` over incident edges. Connectivity guarantees
/// `abs_degree(u) > 0` for every node.
///
/// The graph is immutable after construction and safe to share across
/// threads; all operations on it are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    node_count: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
    pos_degree: Vec<f64>,
    neg_degree: Vec<f64>,
    abs_degree: Vec<f64>,
}

impl WeightedGraph {
    /// Validates and indexes an edge list into a multicut instance.
    ///
    /// Rejects self-loops, duplicate undirected edges, out-of-range
    /// endpoints, non-finite weights, empty edge lists, and disconnected
    /// inputs; each error names the offending edge or node.
    pub fn build(node_count: usize, edge_list: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if edge_list.is_empty() {
            return Err(GraphError::EmptyEdgeList);
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        let mut seen = std::collections::HashSet::with_capacity(edge_list.len());
        for (index, &(a, b, weight)) in edge_list.iter().enumerate() {
            for node in [a, b] {
                if node >= node_count {
                    return Err(GraphError::EndpointOutOfRange {
                        index,
                        node,
                        node_count,
                    });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop { index, node: a });
            }
            if !weight.is_finite() {
                return Err(GraphError::NonFiniteWeight { index });
            }
            let (u, v) = (a.min(b), a.max(b));
            if !seen.insert((u, v)) {
                return Err(GraphError::DuplicateEdge { index, u, v });
            }
            edges.push(Edge { u, v, weight });
        }

        let mut adjacency = vec![Vec::new(); node_count];
        let mut pos_degree = vec![0.0; node_count];
        let mut neg_degree = vec![0.0; node_count];
        let mut abs_degree = vec![0.0; node_count];
        for (idx, e) in edges.iter().enumerate() {
            adjacency[e.u].push((e.v, idx));
            adjacency[e.v].push((e.u, idx));
            for node in [e.u, e.v] {
                if e.weight >= 0.0 {
                    pos_degree[node] += e.weight;
                } else {
                    neg_degree[node] += e.weight;
                }
                abs_degree[node] += e.weight.abs();
            }
        }

        let graph = WeightedGraph {
            node_count,
            edges,
            adjacency,
            pos_degree,
            neg_degree,
            abs_degree,
        };
        if let Some(node) = graph.first_unreachable_node() {
            return Err(GraphError::Disconnected { node });
        }
        Ok(graph)
    }

    fn first_unreachable_node(&self) -> Option<usize> {
        let mut visited = vec![false; self.node_count];
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    stack.push(v);
                }
            }
        }
        visited.iter().position(|&seen| !seen)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> Edge {
        self.edges[index]
    }

    /// Neighbors of `u` as `(neighbor, edge index)` pairs, in edge input order.
    pub fn neighbors(&self, u: usize) -> &[(usize, usize)] {
        &self.adjacency[u]
    }

    /// Edge index of the undirected edge `{u, v}`, if present.
    pub fn find_edge(&self, u: usize, v: usize) -> Option<usize> {
        let (a, b) = if self.adjacency[u].len() <= self.adjacency[v].len() {
            (u, v)
        } else {
            (v, u)
        };
        self.adjacency[a]
            .iter()
            .find(|&&(nbr, _)| nbr == b)
            .map(|&(_, idx)| idx)
    }

    /// Sum of positive incident weights of `u`.
    pub fn pos_degree(&self, u: usize) -> f64 {
        self.pos_degree[u]
    }

    /// Sum of negative incident weights of `u` (non-positive).
    pub fn neg_degree(&self, u: usize) -> f64 {
        self.neg_degree[u]
    }

    /// Signed degree: sum of `|w|` over incident edges. Positive for every
    /// node of a valid instance.
    pub fn abs_degree(&self, u: usize) -> f64 {
        self.abs_degree[u]
    }
}

/// Validates and indexes an edge list into a [`WeightedGraph`].
pub fn build_graph(
    node_count: usize,
    edge_list: &[(usize, usize, f64)],
) -> Result<WeightedGraph, GraphError> {
    WeightedGraph::build(node_count, edge_list)
}

/// Binary edge decisions: `true` marks a cut edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeLabeling {
    labels: Vec<bool>,
}

impl EdgeLabeling {
    pub fn new(labels: Vec<bool>) -> Self {
        EdgeLabeling { labels }
    }

    pub fn all_zeros(edge_count: usize) -> Self {
        EdgeLabeling {
            labels: vec![false; edge_count],
        }
    }

    pub fn all_ones(edge_count: usize) -> Self {
        EdgeLabeling {
            labels: vec![true; edge_count],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_cut(&self, edge: usize) -> bool {
        self.labels[edge]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.labels
    }

    pub fn cut_count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }
}

impl From<Vec<bool>> for EdgeLabeling {
    fn from(labels: Vec<bool>) -> Self {
        EdgeLabeling { labels }
    }
}

/// Relaxed per-edge cut likelihoods in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutProbabilities {
    probs: Vec<f64>,
}

impl CutProbabilities {
    /// Wraps a probability vector; every entry must lie in `[0, 1]`.
    pub fn new(probs: Vec<f64>) -> Result<Self, GraphError> {
        if let Some(index) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(GraphError::NonFiniteWeight { index });
        }
        Ok(CutProbabilities { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Thresholds at 0.5: an edge is cut iff its likelihood is `>= 0.5`.
    pub fn threshold(&self) -> EdgeLabeling {
        EdgeLabeling::new(self.probs.iter().map(|&p| p >= 0.5).collect())
    }
}

/// A partition of the node set into clusters, with component ids dense in
/// `0..k` and numbered by smallest contained node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    component_id: Vec<usize>,
    component_count: usize,
}

impl NodePartition {
    /// Builds a partition from raw per-node ids, renumbering them dense by
    /// smallest contained node.
    pub fn from_raw_ids(raw: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut component_id = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = remap.len();
            let id = *remap.entry(r).or_insert(next);
            component_id.push(id);
        }
        NodePartition {
            component_id,
            component_count: remap.len(),
        }
    }

    pub fn component_of(&self, node: usize) -> usize {
        self.component_id[node]
    }

    pub fn component_count(&self) -> usize {
        self.component_count
    }

    pub fn node_count(&self) -> usize {
        self.component_id.len()
    }

    pub fn ids(&self) -> &[usize] {
        &self.component_id
    }
}

fn check_labeling(graph: &WeightedGraph, labeling: &EdgeLabeling) -> Result<(), GraphError> {
    if labeling.len() != graph.edge_count() {
        return Err(GraphError::LengthMismatch {
            expected: graph.edge_count(),
            got: labeling.len(),
        });
    }
    Ok(())
}

/// Multicut objective: the summed weight of cut edges.
pub fn multicut_cost(graph: &WeightedGraph, labeling: &EdgeLabeling) -> Result<f64, GraphError> {
    check_labeling(graph, labeling)?;
    Ok(graph
        .edges()
        .iter()
        .zip(labeling.as_slice())
        .filter(|(_, &cut)| cut)
        .map(|(e, _)| e.weight)
        .sum())
}

/// Minimal union-find with union by size, used for component labelings and
/// edge contraction.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    /// Resets every element to its own singleton set.
    pub fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i;
        }
        self.size.fill(1);
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets of `x` and `y`; returns the surviving representative.
    pub fn union(&mut self, x: usize, y: usize) -> usize {
        let mut rx = self.find(x);
        let mut ry = self.find(y);
        if rx == ry {
            return rx;
        }
        if self.size[rx] < self.size[ry] {
            std::mem::swap(&mut rx, &mut ry);
        }
        self.size[rx] += self.size[ry];
        self.parent[ry] = rx;
        rx
    }
}

/// Connected components of the subgraph keeping only uncut edges
/// (`y_e = 0`), with deterministic ids by smallest contained node.
pub fn connected_components(
    graph: &WeightedGraph,
    labeling: &EdgeLabeling,
) -> Result<NodePartition, GraphError> {
    check_labeling(graph, labeling)?;
    let mut uf = UnionFind::new(graph.node_count());
    for (idx, e) in graph.edges().iter().enumerate() {
        if !labeling.is_cut(idx) {
            uf.union(e.u, e.v);
        }
    }
    let raw: Vec<usize> = (0..graph.node_count()).map(|u| uf.find(u)).collect();
    Ok(NodePartition::from_raw_ids(&raw))
}

/// True iff the labeling satisfies all cycle inequalities: every cut edge
/// must have its endpoints in different components of the kept subgraph.
pub fn is_feasible(graph: &WeightedGraph, labeling: &EdgeLabeling) -> Result<bool, GraphError> {
    let partition = connected_components(graph, labeling)?;
    Ok(graph
        .edges()
        .iter()
        .zip(labeling.as_slice())
        .all(|(e, &cut)| !cut || partition.component_of(e.u) != partition.component_of(e.v)))
}

/// The labeling cutting exactly the edges whose endpoints lie in different
/// components of `partition`. Always feasible.
///
/// Panics if the partition does not cover all nodes of the graph.
pub fn labeling_from_partition(graph: &WeightedGraph, partition: &NodePartition) -> EdgeLabeling {
    assert_eq!(
        partition.node_count(),
        graph.node_count(),
        "partition covers {} nodes, graph has {}",
        partition.node_count(),
        graph.node_count()
    );
    EdgeLabeling::new(
        graph
            .edges()
            .iter()
            .map(|e| partition.component_of(e.u) != partition.component_of(e.v))
            .collect(),
    )
}

/// Solution-quality metric `max(0, cost / optimal_cost)` clamped to `[0, 1]`.
///
/// All-positive instances have optimal cost 0; there we define the ratio as
/// 1 when the candidate cost is also 0 and as 0 otherwise.
pub fn optimal_objective_ratio(cost: f64, optimal_cost: f64) -> f64 {
    if optimal_cost == 0.0 {
        return if cost == 0.0 { 1.0 } else { 0.0 };
    }
    (cost / optimal_cost).clamp(0.0, 1.0)
}

/// Harmonic mean `n / sum(1/r_i)` of ratios in `[0, 1]`; 0 as soon as any
/// ratio is 0.
pub fn harmonic_mean(ratios: &[f64]) -> Result<f64, GraphError> {
    if ratios.is_empty() {
        return Err(GraphError::EmptyInput);
    }
    if ratios.contains(&0.0) {
        return Ok(0.0);
    }
    Ok(ratios.len() as f64 / ratios.iter().map(|r| 1.0 / r).sum::<f64>())
}
