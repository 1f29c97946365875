//! The learned multicut solver: signed-Laplacian message passing (GCN_W,
//! GIN_W), edge classification, cycle-consistency training, and feasibility
//! rounding.
//!
//! A forward pass maps an instance to per-edge cut likelihoods: node
//! features are initialized from signed degree sums, propagated through `T`
//! message-passing layers whose neighbor messages are weighted by
//! `w_uv / sqrt(deḡ(u) · deḡ(v))` (the signed normalized graph Laplacian),
//! and every edge is classified from the concatenation of its endpoint
//! embeddings in both directions. Thresholding at 0.5 plus connected
//! component rounding always yields a feasible labeling.

mod train;

pub use train::{
    train, train_on_instances, AlphaSchedule, CurveRow, TrainConfig, TrainOutcome, TrainingCurves,
    GATE_THRESHOLD,
};

use crate::cycles::CycleError;
use crate::graph::{
    connected_components, is_feasible, multicut_cost, CutProbabilities, EdgeLabeling, GraphError,
    WeightedGraph,
};
use crate::nn::{
    glorot_uniform, MessageArcs, NnError, RunningStats, Tape, Tensor2D, TensorId,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("bad checkpoint: {reason}")]
    BadCheckpoint { reason: String },
    #[error("bad config: {reason}")]
    BadConfig { reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("instance {index} has no ground-truth labeling")]
    MissingLabels { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Message-passing backbone variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    GcnW,
    GinW,
}

/// Per-edge signed-Laplacian coefficients for both message directions,
/// plus the node index arrays for gather/scatter aggregation.
#[derive(Debug, Clone)]
pub struct SignedMessageIndex {
    arcs: Rc<MessageArcs>,
}

impl SignedMessageIndex {
    pub fn arcs(&self) -> &MessageArcs {
        &self.arcs
    }
}

/// Normalized message coefficients `w_uv / sqrt(deḡ(u) · deḡ(v))` with
/// `deḡ(u)` the sum of absolute incident weights. Graph invariants
/// guarantee positive degrees, so every coefficient is finite.
pub fn signed_message_index(graph: &WeightedGraph) -> SignedMessageIndex {
    let m = graph.edge_count();
    let mut arcs = MessageArcs {
        src: Vec::with_capacity(2 * m),
        dst: Vec::with_capacity(2 * m),
        coeff: Vec::with_capacity(2 * m),
    };
    for e in graph.edges() {
        let coeff = e.weight / (graph.abs_degree(e.u) * graph.abs_degree(e.v)).sqrt();
        arcs.src.push(e.u);
        arcs.dst.push(e.v);
        arcs.coeff.push(coeff);
        arcs.src.push(e.v);
        arcs.dst.push(e.u);
        arcs.coeff.push(coeff);
    }
    SignedMessageIndex {
        arcs: Rc::new(arcs),
    }
}

/// Initial node features: row `u` holds the sums of positive and of
/// negative incident edge weights.
pub fn init_node_features(graph: &WeightedGraph) -> Tensor2D {
    let n = graph.node_count();
    let mut features = Tensor2D::zeros(n, 2);
    for u in 0..n {
        features.set(u, 0, graph.pos_degree(u));
        features.set(u, 1, graph.neg_degree(u));
    }
    features
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: Tensor2D,
    pub bias: Tensor2D,
}

impl LinearParams {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        LinearParams {
            weight: glorot_uniform(fan_in, fan_out, rng),
            bias: Tensor2D::zeros(1, fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Tensor2D,
    pub beta: Tensor2D,
    pub running: RunningStats,
}

impl BatchNormParams {
    fn identity(features: usize) -> Self {
        BatchNormParams {
            gamma: Tensor2D::filled(1, features, 1.0),
            beta: Tensor2D::zeros(1, features),
            running: RunningStats::identity(features),
        }
    }
}

/// One message-passing layer: the update map `g_θ` (one linear for GCN_W,
/// a two-layer MLP for GIN_W), optional batch norm, and the GIN self-term
/// weight `(1 + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    pub linears: Vec<LinearParams>,
    pub batch_norm: Option<BatchNormParams>,
    pub gin_epsilon: f64,
}

/// Full parameter set and architecture metadata of the learned solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub backbone: Backbone,
    pub depth: usize,
    pub width: usize,
    pub batch_norm: bool,
    pub layers: Vec<GnnLayer>,
    /// Edge classifier MLP over concatenated endpoint embeddings
    /// (2F -> 2F -> 2F -> 1).
    pub classifier: Vec<LinearParams>,
    /// Apply ReLU after batch norm (default) instead of before it.
    pub relu_after_batch_norm: bool,
    /// Scale the GCN self term by `1 / deḡ(u)` instead of leaving it
    /// unnormalized.
    pub normalize_self_term: bool,
    /// Average the two directed classifier outputs pre-sigmoid instead of
    /// averaging probabilities.
    pub average_logits: bool,
}

/// Input feature dimension: positive and negative degree sums.
pub const NODE_FEATURE_DIM: usize = 2;

impl ModelParams {
    /// Fresh Glorot-initialized model. The paper-scale presets are depth 12
    /// for complete-graph training and depth 20 for sparse graphs, both at
    /// width 128; desk-scale experiments use 4/32.
    pub fn new(
        backbone: Backbone,
        depth: usize,
        width: usize,
        batch_norm: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(depth >= 1 && width >= 1);
        let mut layers = Vec::with_capacity(depth);
        for t in 0..depth {
            let fan_in = if t == 0 { NODE_FEATURE_DIM } else { width };
            let linears = match backbone {
                Backbone::GcnW => vec![LinearParams::glorot(fan_in, width, rng)],
                Backbone::GinW => vec![
                    LinearParams::glorot(fan_in, width, rng),
                    LinearParams::glorot(width, width, rng),
                ],
            };
            layers.push(GnnLayer {
                linears,
                batch_norm: batch_norm.then(|| BatchNormParams::identity(width)),
                gin_epsilon: 0.0,
            });
        }
        let hidden = 2 * width;
        let classifier = vec![
            LinearParams::glorot(hidden, hidden, rng),
            LinearParams::glorot(hidden, hidden, rng),
            LinearParams::glorot(hidden, 1, rng),
        ];
        ModelParams {
            backbone,
            depth,
            width,
            batch_norm,
            layers,
            classifier,
            relu_after_batch_norm: true,
            normalize_self_term: false,
            average_logits: false,
        }
    }

    /// Trainable tensors in checkpoint order: per layer the linear weights
    /// and biases then the batch-norm scale and shift, followed by the
    /// classifier linears. Running statistics are not trainable.
    pub fn param_refs(&self) -> Vec<&Tensor2D> {
        let mut refs = Vec::new();
        for layer in &self.layers {
            for lin in &layer.linears {
                refs.push(&lin.weight);
                refs.push(&lin.bias);
            }
            if let Some(bn) = &layer.batch_norm {
                refs.push(&bn.gamma);
                refs.push(&bn.beta);
            }
        }
        for lin in &self.classifier {
            refs.push(&lin.weight);
            refs.push(&lin.bias);
        }
        refs
    }

    pub fn param_refs_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut refs = Vec::new();
        for layer in &mut self.layers {
            for lin in &mut layer.linears {
                refs.push(&mut lin.weight);
                refs.push(&mut lin.bias);
            }
            if let Some(bn) = &mut layer.batch_norm {
                refs.push(&mut bn.gamma);
                refs.push(&mut bn.beta);
            }
        }
        for lin in &mut self.classifier {
            refs.push(&mut lin.weight);
            refs.push(&mut lin.bias);
        }
        refs
    }

    /// Structural consistency of the stored tensors with the declared
    /// architecture.
    pub fn validate(&self) -> Result<(), GnnError> {
        let fail = |reason: String| Err(GnnError::BadCheckpoint { reason });
        if self.layers.len() != self.depth {
            return fail(format!(
                "declared depth {} but {} layers",
                self.depth,
                self.layers.len()
            ));
        }
        for (t, layer) in self.layers.iter().enumerate() {
            let fan_in = if t == 0 { NODE_FEATURE_DIM } else { self.width };
            let expected_linears = match self.backbone {
                Backbone::GcnW => 1,
                Backbone::GinW => 2,
            };
            if layer.linears.len() != expected_linears {
                return fail(format!("layer {t} has {} linears", layer.linears.len()));
            }
            if layer.linears[0].weight.shape() != (fan_in, self.width) {
                return fail(format!(
                    "layer {t} weight shape {:?}",
                    layer.linears[0].weight.shape()
                ));
            }
            if layer.batch_norm.is_some() != self.batch_norm {
                return fail(format!("layer {t} batch-norm presence mismatch"));
            }
        }
        if self.classifier.len() != 3
            || self.classifier[0].weight.rows() != 2 * self.width
            || self.classifier[2].weight.cols() != 1
        {
            return fail("classifier must map 2F through two hidden layers to 1".into());
        }
        Ok(())
    }
}

/// Graph data prepared for a forward pass; a batch of graphs becomes one
/// block-diagonal instance with offset node and edge ids.
pub struct ForwardGraph {
    features: Tensor2D,
    norm_arcs: Rc<MessageArcs>,
    raw_arcs: Rc<MessageArcs>,
    endpoint_u: Rc<Vec<usize>>,
    endpoint_v: Rc<Vec<usize>>,
    inv_abs_degree: Vec<f64>,
    edge_count: usize,
}

impl ForwardGraph {
    pub fn from_graph(graph: &WeightedGraph) -> Self {
        Self::from_graphs(&[graph])
    }

    pub fn from_graphs(graphs: &[&WeightedGraph]) -> Self {
        let total_nodes: usize = graphs.iter().map(|g| g.node_count()).sum();
        let total_edges: usize = graphs.iter().map(|g| g.edge_count()).sum();
        let mut features = Tensor2D::zeros(total_nodes, NODE_FEATURE_DIM);
        let mut norm = MessageArcs {
            src: Vec::with_capacity(2 * total_edges),
            dst: Vec::with_capacity(2 * total_edges),
            coeff: Vec::with_capacity(2 * total_edges),
        };
        let mut raw = MessageArcs {
            src: Vec::with_capacity(2 * total_edges),
            dst: Vec::with_capacity(2 * total_edges),
            coeff: Vec::with_capacity(2 * total_edges),
        };
        let mut endpoint_u = Vec::with_capacity(total_edges);
        let mut endpoint_v = Vec::with_capacity(total_edges);
        let mut inv_abs_degree = Vec::with_capacity(total_nodes);
        let mut node_offset = 0;
        for g in graphs {
            for u in 0..g.node_count() {
                features.set(node_offset + u, 0, g.pos_degree(u));
                features.set(node_offset + u, 1, g.neg_degree(u));
                inv_abs_degree.push(1.0 / g.abs_degree(u));
            }
            for e in g.edges() {
                let coeff = e.weight / (g.abs_degree(e.u) * g.abs_degree(e.v)).sqrt();
                for (s, d) in [(e.u, e.v), (e.v, e.u)] {
                    norm.src.push(node_offset + s);
                    norm.dst.push(node_offset + d);
                    norm.coeff.push(coeff);
                    raw.src.push(node_offset + s);
                    raw.dst.push(node_offset + d);
                    raw.coeff.push(e.weight);
                }
                endpoint_u.push(node_offset + e.u);
                endpoint_v.push(node_offset + e.v);
            }
            node_offset += g.node_count();
        }
        ForwardGraph {
            features,
            norm_arcs: Rc::new(norm),
            raw_arcs: Rc::new(raw),
            endpoint_u: Rc::new(endpoint_u),
            endpoint_v: Rc::new(endpoint_v),
            inv_abs_degree,
            edge_count: total_edges,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }
}

/// Tape handles produced by a recorded forward pass.
pub struct ForwardPass {
    /// Per-edge cut probabilities (m x 1), already direction-averaged.
    pub probs: TensorId,
    /// Final node embeddings (n x F).
    pub embeddings: TensorId,
    /// Parameter leaves in [`ModelParams::param_refs`] order.
    pub param_ids: Vec<TensorId>,
}

/// Records the full model forward pass on `tape`.
///
/// In training mode batch statistics normalize each feature and the
/// model's running statistics are updated in place; in inference mode
/// batch norm is the fixed affine map given by the stored statistics.
pub fn forward_pass(
    tape: &mut Tape,
    model: &mut ModelParams,
    input: &ForwardGraph,
    training: bool,
) -> Result<ForwardPass, GnnError> {
    let mut param_ids = Vec::new();
    let mut h = tape.leaf(input.features.clone());

    let layer_count = model.layers.len();
    for t in 0..layer_count {
        // bind this layer's parameters
        let lin_ids: Vec<(TensorId, TensorId)> = model.layers[t]
            .linears
            .iter()
            .map(|lin| (tape.leaf(lin.weight.clone()), tape.leaf(lin.bias.clone())))
            .collect();
        let bn_ids = model.layers[t]
            .batch_norm
            .as_ref()
            .map(|bn| (tape.leaf(bn.gamma.clone()), tape.leaf(bn.beta.clone())));
        for &(w, b) in &lin_ids {
            param_ids.push(w);
            param_ids.push(b);
        }
        if let Some((gamma, beta)) = bn_ids {
            param_ids.push(gamma);
            param_ids.push(beta);
        }

        let arcs = match model.backbone {
            Backbone::GcnW => input.norm_arcs.clone(),
            Backbone::GinW => input.raw_arcs.clone(),
        };
        let neighbors = tape.edge_weighted_sum(h, arcs);
        let self_term = match model.backbone {
            Backbone::GcnW => {
                if model.normalize_self_term {
                    let cols = tape.value(h).cols();
                    let mut tile = Tensor2D::zeros(input.inv_abs_degree.len(), cols);
                    for (r, &inv) in input.inv_abs_degree.iter().enumerate() {
                        for c in 0..cols {
                            tile.set(r, c, inv);
                        }
                    }
                    let scale = tape.leaf(tile);
                    tape.hadamard(h, scale)?
                } else {
                    h
                }
            }
            Backbone::GinW => {
                let eps = model.layers[t].gin_epsilon;
                tape.scale(h, 1.0 + eps)
            }
        };
        let agg = tape.add(self_term, neighbors)?;

        let mut z = agg;
        for (i, &(w, b)) in lin_ids.iter().enumerate() {
            if i > 0 {
                z = tape.relu(z);
            }
            z = tape.matmul(z, w)?;
            z = tape.add(z, b)?;
        }

        h = match (bn_ids, model.relu_after_batch_norm) {
            (Some((gamma, beta)), true) => {
                let bn = model.layers[t].batch_norm.as_mut().expect("checked");
                let normed = tape.batch_norm(z, gamma, beta, &mut bn.running, training)?;
                tape.relu(normed)
            }
            (Some((gamma, beta)), false) => {
                let active = tape.relu(z);
                let bn = model.layers[t].batch_norm.as_mut().expect("checked");
                tape.batch_norm(active, gamma, beta, &mut bn.running, training)?
            }
            (None, _) => tape.relu(z),
        };
    }

    let classifier_ids: Vec<(TensorId, TensorId)> = model
        .classifier
        .iter()
        .map(|lin| (tape.leaf(lin.weight.clone()), tape.leaf(lin.bias.clone())))
        .collect();
    for &(w, b) in &classifier_ids {
        param_ids.push(w);
        param_ids.push(b);
    }
    let probs = classify_edges(
        tape,
        h,
        &input.endpoint_u,
        &input.endpoint_v,
        &classifier_ids,
        model.average_logits,
    )?;

    Ok(ForwardPass {
        probs,
        embeddings: h,
        param_ids,
    })
}

/// Runs the classifier MLP on both concatenation orders of the endpoint
/// embeddings and averages the two directions, making the result
/// order-invariant by construction.
fn classify_edges(
    tape: &mut Tape,
    embeddings: TensorId,
    endpoint_u: &Rc<Vec<usize>>,
    endpoint_v: &Rc<Vec<usize>>,
    classifier_ids: &[(TensorId, TensorId)],
    average_logits: bool,
) -> Result<TensorId, NnError> {
    let mut logits = Vec::with_capacity(2);
    for (first, second) in [(endpoint_u, endpoint_v), (endpoint_v, endpoint_u)] {
        let hu = tape.gather_rows(embeddings, first.clone());
        let hv = tape.gather_rows(embeddings, second.clone());
        let mut z = tape.concat_cols(hu, hv)?;
        for (i, &(w, b)) in classifier_ids.iter().enumerate() {
            if i > 0 {
                z = tape.relu(z);
            }
            z = tape.matmul(z, w)?;
            z = tape.add(z, b)?;
        }
        logits.push(z);
    }
    if average_logits {
        let sum = tape.add(logits[0], logits[1])?;
        let mean = tape.scale(sum, 0.5);
        Ok(tape.sigmoid(mean))
    } else {
        let p1 = tape.sigmoid(logits[0]);
        let p2 = tape.sigmoid(logits[1]);
        let sum = tape.add(p1, p2)?;
        Ok(tape.scale(sum, 0.5))
    }
}

/// Classifies edges from precomputed node embeddings: for each edge the
/// MLP scores both concatenation orders and the directions are averaged.
pub fn edge_probabilities(
    model: &ModelParams,
    node_embeddings: &Tensor2D,
    graph: &WeightedGraph,
) -> Result<CutProbabilities, GnnError> {
    if node_embeddings.rows() != graph.node_count() {
        return Err(NnError::ShapeMismatch {
            op: "edge_probabilities",
            lhs: node_embeddings.shape(),
            rhs: (graph.node_count(), 2 * model.width),
        }
        .into());
    }
    let mut tape = Tape::new();
    let h = tape.leaf(node_embeddings.clone());
    let classifier_ids: Vec<(TensorId, TensorId)> = model
        .classifier
        .iter()
        .map(|lin| (tape.leaf(lin.weight.clone()), tape.leaf(lin.bias.clone())))
        .collect();
    let endpoint_u = Rc::new(graph.edges().iter().map(|e| e.u).collect::<Vec<_>>());
    let endpoint_v = Rc::new(graph.edges().iter().map(|e| e.v).collect::<Vec<_>>());
    let probs = classify_edges(
        &mut tape,
        h,
        &endpoint_u,
        &endpoint_v,
        &classifier_ids,
        model.average_logits,
    )?;
    Ok(CutProbabilities::new(tape.value(probs).data().to_vec())?)
}

/// Projects cut likelihoods to a feasible labeling: threshold at 0.5 (cut
/// iff `p >= 0.5`), compute components over the kept edges, and reinstate
/// every cut edge whose endpoints remain in one component.
pub fn round_to_feasible(graph: &WeightedGraph, probs: &CutProbabilities) -> EdgeLabeling {
    let thresholded = probs.threshold();
    let partition = connected_components(graph, &thresholded).expect("threshold matches graph");
    labeling_from_components(graph, &partition)
}

fn labeling_from_components(
    graph: &WeightedGraph,
    partition: &crate::graph::NodePartition,
) -> EdgeLabeling {
    crate::graph::labeling_from_partition(graph, partition)
}

/// Output of a single model forward pass over one instance.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub labeling: EdgeLabeling,
    pub objective: f64,
    pub probs: CutProbabilities,
    /// Whether the thresholded labeling already satisfied every cycle
    /// inequality before rounding.
    pub feasible_before_rounding: bool,
    pub node_embeddings: Tensor2D,
}

/// Full inference pipeline: message index, feature init, `T` layers,
/// edge classification, feasibility check, and rounding. The returned
/// labeling is always feasible.
pub fn predict(model: &ModelParams, graph: &WeightedGraph) -> Result<Prediction, GnnError> {
    let input = ForwardGraph::from_graph(graph);
    let mut tape = Tape::new();
    // inference never mutates running statistics; the clone keeps the
    // shared model immutable
    let mut scratch = model.clone();
    let pass = forward_pass(&mut tape, &mut scratch, &input, false)?;
    let probs = CutProbabilities::new(tape.value(pass.probs).data().to_vec())?;
    let thresholded = probs.threshold();
    let feasible_before_rounding = is_feasible(graph, &thresholded)?;
    let labeling = round_to_feasible(graph, &probs);
    let objective = multicut_cost(graph, &labeling)?;
    Ok(Prediction {
        labeling,
        objective,
        probs,
        feasible_before_rounding,
        node_embeddings: tape.value(pass.embeddings).clone(),
    })
}

/// Node embeddings as CSV (`node_id` column followed by the F embedding
/// columns), the export behind the embedding-space visualizations.
pub fn embeddings_to_csv(embeddings: &Tensor2D) -> String {
    let mut out = String::from("node_id");
    for c in 0..embeddings.cols() {
        out.push_str(&format!(",f{c}"));
    }
    out.push('\n');
    for r in 0..embeddings.rows() {
        out.push_str(&r.to_string());
        for c in 0..embeddings.cols() {
            out.push_str(&format!(",{}", embeddings.get(r, c)));
        }
        out.push('\n');
    }
    out
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: ModelParams,
}

/// Serializes a model checkpoint: a versioned JSON container with the
/// architecture metadata and every parameter tensor in
/// [`ModelParams::param_refs`] order.
pub fn save_model(model: &ModelParams) -> String {
    serde_json::to_string(&Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: model.clone(),
    })
    .expect("model serialization cannot fail")
}

/// Parses and validates a model checkpoint.
pub fn load_model(text: &str) -> Result<ModelParams, GnnError> {
    let checkpoint: Checkpoint =
        serde_json::from_str(text).map_err(|e| GnnError::BadCheckpoint {
            reason: e.to_string(),
        })?;
    if checkpoint.format_version != CHECKPOINT_VERSION {
        return Err(GnnError::BadCheckpoint {
            reason: format!(
                "unsupported checkpoint version {}",
                checkpoint.format_version
            ),
        });
    }
    checkpoint.model.validate()?;
    Ok(checkpoint.model)
}

pub fn save_model_file(model: &ModelParams, path: &std::path::Path) -> Result<(), GnnError> {
    Ok(std::fs::write(path, save_model(model))?)
}

pub fn load_model_file(path: &std::path::Path) -> Result<ModelParams, GnnError> {
    load_model(&std::fs::read_to_string(path)?)
}
