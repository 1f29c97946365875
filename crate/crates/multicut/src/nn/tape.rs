//! Operation recording and reverse-mode backpropagation.

use super::{NnError, Tensor2D};
use std::rc::Rc;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// Probabilities fed to the BCE loss are clamped into
/// `[BCE_PROB_CLAMP, 1 - BCE_PROB_CLAMP]` to avoid log(0).
pub const BCE_PROB_CLAMP: f64 = 1e-7;

/// Batch-normalization variance guard.
pub const BN_EPSILON: f64 = 1e-5;

/// Momentum of the running-statistics update in training mode.
pub const BN_MOMENTUM: f64 = 0.1;

/// Directed message arcs for gather/scatter aggregation over edge lists:
/// output row `dst[i]` accumulates `coeff[i] * input row src[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageArcs {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub coeff: Vec<f64>,
}

/// Per-feature running mean and variance for batch-norm inference.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn identity(features: usize) -> Self {
        RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }
}

#[derive(Debug, Clone)]
enum BnCache {
    Training { mean: Vec<f64>, inv_std: Vec<f64> },
    Inference { mean: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    AddRowBroadcast(TensorId, TensorId),
    Hadamard(TensorId, TensorId),
    Scale(TensorId, f64),
    Relu(TensorId),
    Sigmoid(TensorId),
    ConcatCols(TensorId, TensorId),
    SumRows(TensorId),
    MeanRows(TensorId),
    MeanAll(TensorId),
    GatherRows(TensorId, Rc<Vec<usize>>),
    EdgeWeightedSum(TensorId, Rc<MessageArcs>),
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        cache: BnCache,
    },
    BceLoss {
        pred: TensorId,
        target: Rc<Vec<f64>>,
    },
    CyclePenalty {
        probs: TensorId,
        cycles: Rc<Vec<Vec<usize>>>,
        alpha: f64,
        gate_threshold: f64,
    },
}

struct Node {
    value: Tensor2D,
    op: Op,
}

/// A record of primitive operations in execution (hence topological) order.
///
/// Tensors are created through the op methods and referenced by
/// [`TensorId`]; [`Tape::backward`] replays the record in reverse to
/// produce exact gradients for every recorded tensor.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients per recorded tensor, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the given tensor; zeros if the
    /// tensor does not influence the loss.
    pub fn take(&mut self, id: TensorId, shape: (usize, usize)) -> Tensor2D {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor2D::zeros(shape.0, shape.1))
    }

    pub fn get(&self, id: TensorId) -> Option<&Tensor2D> {
        self.grads[id.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: TensorId) -> &Tensor2D {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor2D, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Records an input tensor (parameter or constant).
    pub fn leaf(&mut self, value: Tensor2D) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let value = matmul_values(self.value(a), self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) == (br, bc) {
            let mut value = self.value(a).clone();
            for (x, &y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
                *x += y;
            }
            Ok(self.push(value, Op::Add(a, b)))
        } else if br == 1 && bc == ac {
            // broadcast a row (bias) over all rows
            let mut value = self.value(a).clone();
            for r in 0..ar {
                for c in 0..ac {
                    let y = self.value(b).get(0, c);
                    let x = value.get(r, c);
                    value.set(r, c, x + y);
                }
            }
            Ok(self.push(value, Op::AddRowBroadcast(a, b)))
        } else {
            Err(NnError::ShapeMismatch {
                op: "add",
                lhs: (ar, ac),
                rhs: (br, bc),
            })
        }
    }

    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(NnError::ShapeMismatch {
                op: "hadamard",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let mut value = self.value(a).clone();
        for (x, &y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NnError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(NnError::ShapeMismatch {
                op: "concat_cols",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let mut value = Tensor2D::zeros(ar, ac + bc);
        for r in 0..ar {
            let row = &mut value.data_mut()[r * (ac + bc)..(r + 1) * (ac + bc)];
            row[..ac].copy_from_slice(self.value(a).row(r));
            row[ac..].copy_from_slice(self.value(b).row(r));
        }
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Column-wise sum over rows: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, x: TensorId) -> TensorId {
        let value = column_reduce(self.value(x), 1.0);
        self.push(value, Op::SumRows(x))
    }

    /// Column-wise mean over rows: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, x: TensorId) -> TensorId {
        let rows = self.shape(x).0;
        let value = column_reduce(self.value(x), 1.0 / rows as f64);
        self.push(value, Op::MeanRows(x))
    }

    /// Mean over every entry: `r x c -> 1 x 1`.
    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let t = self.value(x);
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor2D::scalar(mean), Op::MeanAll(x))
    }

    /// Row gather: output row `i` is input row `indices[i]`.
    pub fn gather_rows(&mut self, x: TensorId, indices: Rc<Vec<usize>>) -> TensorId {
        let t = self.value(x);
        let mut value = Tensor2D::zeros(indices.len(), t.cols());
        for (i, &r) in indices.iter().enumerate() {
            let cols = t.cols();
            value.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(t.row(r));
        }
        self.push(value, Op::GatherRows(x, indices))
    }

    /// Weighted neighbor aggregation over directed arcs: output row
    /// `dst[i]` accumulates `coeff[i]` times input row `src[i]`. Shape is
    /// preserved.
    pub fn edge_weighted_sum(&mut self, x: TensorId, arcs: Rc<MessageArcs>) -> TensorId {
        let t = self.value(x);
        let cols = t.cols();
        let mut value = Tensor2D::zeros(t.rows(), cols);
        for ((&s, &d), &c) in arcs.src.iter().zip(&arcs.dst).zip(&arcs.coeff) {
            let src_row: Vec<f64> = t.row(s).to_vec();
            let out = &mut value.data_mut()[d * cols..(d + 1) * cols];
            for (o, v) in out.iter_mut().zip(src_row) {
                *o += c * v;
            }
        }
        self.push(value, Op::EdgeWeightedSum(x, arcs))
    }

    /// Batch normalization over the row (item) dimension.
    ///
    /// In training mode the batch mean and biased variance normalize each
    /// feature column and `running` is updated with momentum
    /// [`BN_MOMENTUM`]; in inference mode the stored running statistics are
    /// used, making the op a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running: &mut RunningStats,
        training: bool,
    ) -> Result<TensorId, NnError> {
        let (rows, cols) = self.shape(x);
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(id) != (1, cols) {
                return Err(NnError::ShapeMismatch {
                    op: if name == "gamma" {
                        "batch_norm gamma"
                    } else {
                        "batch_norm beta"
                    },
                    lhs: (rows, cols),
                    rhs: self.shape(id),
                });
            }
        }
        if running.mean.len() != cols {
            return Err(NnError::LengthMismatch {
                expected: cols,
                got: running.mean.len(),
            });
        }
        if training && rows < 2 {
            return Err(NnError::DegenerateBatch { rows });
        }

        let (mean, var) = if training {
            let mut mean = vec![0.0; cols];
            let mut var = vec![0.0; cols];
            let t = self.value(x);
            for r in 0..rows {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += t.get(r, c);
                }
            }
            for m in &mut mean {
                *m /= rows as f64;
            }
            for r in 0..rows {
                for c in 0..cols {
                    let d = t.get(r, c) - mean[c];
                    var[c] += d * d;
                }
            }
            for v in &mut var {
                *v /= rows as f64;
            }
            for c in 0..cols {
                running.mean[c] = (1.0 - BN_MOMENTUM) * running.mean[c] + BN_MOMENTUM * mean[c];
                running.var[c] = (1.0 - BN_MOMENTUM) * running.var[c] + BN_MOMENTUM * var[c];
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

        let mut value = Tensor2D::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let xhat = (self.value(x).get(r, c) - mean[c]) * inv_std[c];
                value.set(r, c, self.value(gamma).get(0, c) * xhat + self.value(beta).get(0, c));
            }
        }
        let cache = if training {
            BnCache::Training { mean, inv_std }
        } else {
            BnCache::Inference { mean, inv_std }
        };
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }

    /// Mean binary cross entropy between predicted probabilities and 0/1
    /// targets. Predictions are clamped into
    /// `[BCE_PROB_CLAMP, 1 - BCE_PROB_CLAMP]`.
    pub fn bce_loss(&mut self, pred: TensorId, target: Rc<Vec<f64>>) -> Result<TensorId, NnError> {
        let t = self.value(pred);
        if t.len() != target.len() {
            return Err(NnError::LengthMismatch {
                expected: t.len(),
                got: target.len(),
            });
        }
        let mut total = 0.0;
        for (&p, &y) in t.data().iter().zip(target.iter()) {
            let p = clamp_prob(p);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let value = Tensor2D::scalar(total / target.len() as f64);
        Ok(self.push(value, Op::BceLoss { pred, target }))
    }

    /// Differentiable cycle penalty: for every cycle, every edge with
    /// probability at or above `gate_threshold` contributes its probability
    /// times the product of the complements of the remaining cycle edges,
    /// all scaled by `alpha`.
    ///
    /// The gate is a stop-gradient mask recomputed from the forward values;
    /// gated-out terms contribute neither loss nor gradient.
    pub fn cycle_penalty(
        &mut self,
        probs: TensorId,
        cycles: Rc<Vec<Vec<usize>>>,
        alpha: f64,
        gate_threshold: f64,
    ) -> Result<TensorId, NnError> {
        let p = self.value(probs);
        for cycle in cycles.iter() {
            if let Some(&bad) = cycle.iter().find(|&&e| e >= p.len()) {
                return Err(NnError::LengthMismatch {
                    expected: p.len(),
                    got: bad + 1,
                });
            }
        }
        let value = Tensor2D::scalar(cycle_penalty_value(
            p.data(),
            &cycles,
            alpha,
            gate_threshold,
        ));
        Ok(self.push(
            value,
            Op::CyclePenalty {
                probs,
                cycles,
                alpha,
                gate_threshold,
            },
        ))
    }

    /// Reverse-mode gradients of a scalar loss for every recorded tensor.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients, NnError> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(NnError::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Tensor2D>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2D::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            // take to appease the borrow checker; restored after the match
            let Some(gy) = grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = matmul_grad_lhs(&gy, self.value(*b));
                    let db = matmul_grad_rhs(self.value(*a), &gy);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, gy.clone());
                    accumulate(&mut grads, *b, gy.clone());
                }
                Op::AddRowBroadcast(a, b) => {
                    accumulate(&mut grads, *b, column_reduce(&gy, 1.0));
                    accumulate(&mut grads, *a, gy.clone());
                }
                Op::Hadamard(a, b) => {
                    let mut da = gy.clone();
                    for (x, &y) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *x *= y;
                    }
                    let mut db = gy.clone();
                    for (x, &y) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *x *= y;
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, *x, gy.map(|v| v * factor));
                }
                Op::Relu(x) => {
                    let mut dx = gy.clone();
                    for (g, &v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = gy.clone();
                    for (g, &y) in dx.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                        *g *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let (rows, ac) = self.shape(*a);
                    let bc = self.shape(*b).1;
                    let mut da = Tensor2D::zeros(rows, ac);
                    let mut db = Tensor2D::zeros(rows, bc);
                    for r in 0..rows {
                        let g = gy.row(r);
                        da.data_mut()[r * ac..(r + 1) * ac].copy_from_slice(&g[..ac]);
                        db.data_mut()[r * bc..(r + 1) * bc].copy_from_slice(&g[ac..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SumRows(x) => {
                    accumulate(&mut grads, *x, broadcast_rows(&gy, self.shape(*x).0, 1.0));
                }
                Op::MeanRows(x) => {
                    let rows = self.shape(*x).0;
                    accumulate(&mut grads, *x, broadcast_rows(&gy, rows, 1.0 / rows as f64));
                }
                Op::MeanAll(x) => {
                    let (rows, cols) = self.shape(*x);
                    let g = gy.scalar_value() / (rows * cols) as f64;
                    accumulate(&mut grads, *x, Tensor2D::filled(rows, cols, g));
                }
                Op::GatherRows(x, indices) => {
                    let (rows, cols) = self.shape(*x);
                    let mut dx = Tensor2D::zeros(rows, cols);
                    for (i, &r) in indices.iter().enumerate() {
                        let g = gy.row(i).to_vec();
                        let out = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                        for (o, v) in out.iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::EdgeWeightedSum(x, arcs) => {
                    let (rows, cols) = self.shape(*x);
                    let mut dx = Tensor2D::zeros(rows, cols);
                    for ((&s, &d), &c) in arcs.src.iter().zip(&arcs.dst).zip(&arcs.coeff) {
                        let g = gy.row(d).to_vec();
                        let out = &mut dx.data_mut()[s * cols..(s + 1) * cols];
                        for (o, v) in out.iter_mut().zip(g) {
                            *o += c * v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (dx, dgamma, dbeta) =
                        batch_norm_backward(self.value(*x), self.value(*gamma), cache, &gy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::BceLoss { pred, target } => {
                    let g = gy.scalar_value() / target.len() as f64;
                    let t = self.value(*pred);
                    let mut dp = Tensor2D::zeros(t.rows(), t.cols());
                    for (i, (&p, &y)) in t.data().iter().zip(target.iter()).enumerate() {
                        // zero gradient where the clamp is active
                        if (BCE_PROB_CLAMP..=1.0 - BCE_PROB_CLAMP).contains(&p) {
                            dp.data_mut()[i] = g * (-y / p + (1.0 - y) / (1.0 - p));
                        }
                    }
                    accumulate(&mut grads, *pred, dp);
                }
                Op::CyclePenalty {
                    probs,
                    cycles,
                    alpha,
                    gate_threshold,
                } => {
                    let p = self.value(*probs);
                    let mut dp = Tensor2D::zeros(p.rows(), p.cols());
                    cycle_penalty_backward(
                        p.data(),
                        cycles,
                        *alpha,
                        *gate_threshold,
                        gy.scalar_value(),
                        dp.data_mut(),
                    );
                    accumulate(&mut grads, *probs, dp);
                }
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor2D>], id: TensorId, delta: Tensor2D) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (x, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *x += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_PROB_CLAMP, 1.0 - BCE_PROB_CLAMP)
}

fn matmul_values(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
    let (n, p) = a.shape();
    let q = b.cols();
    let mut out = Tensor2D::zeros(n, q);
    for i in 0..n {
        for k in 0..p {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k).to_vec();
            let orow = &mut out.data_mut()[i * q..(i + 1) * q];
            for (o, v) in orow.iter_mut().zip(brow) {
                *o += aik * v;
            }
        }
    }
    out
}

/// d(A·B)/dA = G · Bᵀ, without materializing the transpose.
fn matmul_grad_lhs(gy: &Tensor2D, b: &Tensor2D) -> Tensor2D {
    let (n, q) = gy.shape();
    let p = b.rows();
    debug_assert_eq!(b.cols(), q);
    let mut out = Tensor2D::zeros(n, p);
    for i in 0..n {
        let grow = gy.row(i);
        for k in 0..p {
            let dot: f64 = grow.iter().zip(b.row(k)).map(|(&g, &bv)| g * bv).sum();
            out.set(i, k, dot);
        }
    }
    out
}

/// d(A·B)/dB = Aᵀ · G, without materializing the transpose.
fn matmul_grad_rhs(a: &Tensor2D, gy: &Tensor2D) -> Tensor2D {
    let (n, p) = a.shape();
    let q = gy.cols();
    let mut out = Tensor2D::zeros(p, q);
    for i in 0..n {
        let grow = gy.row(i).to_vec();
        for k in 0..p {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out.data_mut()[k * q..(k + 1) * q];
            for (o, &g) in orow.iter_mut().zip(&grow) {
                *o += aik * g;
            }
        }
    }
    out
}

fn column_reduce(t: &Tensor2D, scale: f64) -> Tensor2D {
    let (rows, cols) = t.shape();
    let mut out = Tensor2D::zeros(1, cols);
    for r in 0..rows {
        for (c, &v) in t.row(r).iter().enumerate() {
            let cur = out.get(0, c);
            out.set(0, c, cur + v * scale);
        }
    }
    out
}

fn broadcast_rows(row: &Tensor2D, rows: usize, scale: f64) -> Tensor2D {
    let cols = row.cols();
    let mut out = Tensor2D::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out.set(r, c, row.get(0, c) * scale);
        }
    }
    out
}

fn batch_norm_backward(
    x: &Tensor2D,
    gamma: &Tensor2D,
    cache: &BnCache,
    gy: &Tensor2D,
) -> (Tensor2D, Tensor2D, Tensor2D) {
    let (rows, cols) = x.shape();
    let n = rows as f64;
    let mut dx = Tensor2D::zeros(rows, cols);
    let mut dgamma = Tensor2D::zeros(1, cols);
    let mut dbeta = Tensor2D::zeros(1, cols);
    match cache {
        BnCache::Training { mean, inv_std } => {
            for c in 0..cols {
                let g = gamma.get(0, c);
                let mut sum_dy = 0.0;
                let mut sum_dy_xhat = 0.0;
                for r in 0..rows {
                    let xhat = (x.get(r, c) - mean[c]) * inv_std[c];
                    let dy = gy.get(r, c);
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                }
                dgamma.set(0, c, sum_dy_xhat);
                dbeta.set(0, c, sum_dy);
                for r in 0..rows {
                    let xhat = (x.get(r, c) - mean[c]) * inv_std[c];
                    let dy = gy.get(r, c);
                    let dxv = g * inv_std[c] / n * (n * dy - sum_dy - xhat * sum_dy_xhat);
                    dx.set(r, c, dxv);
                }
            }
        }
        BnCache::Inference { mean, inv_std } => {
            for c in 0..cols {
                let g = gamma.get(0, c);
                let mut sum_dy = 0.0;
                let mut sum_dy_xhat = 0.0;
                for r in 0..rows {
                    let xhat = (x.get(r, c) - mean[c]) * inv_std[c];
                    let dy = gy.get(r, c);
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                    dx.set(r, c, dy * g * inv_std[c]);
                }
                dgamma.set(0, c, sum_dy_xhat);
                dbeta.set(0, c, sum_dy);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Mean binary cross entropy of clamped probabilities against 0/1 targets,
/// as a plain value (no tape required).
pub fn bce_value(probs: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(probs.len(), targets.len());
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(targets) {
        let p = clamp_prob(p);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / targets.len() as f64
}

/// The cycle penalty as a plain value (no tape required).
pub fn cycle_penalty_value(
    probs: &[f64],
    cycles: &[Vec<usize>],
    alpha: f64,
    gate_threshold: f64,
) -> f64 {
    let mut total = 0.0;
    for cycle in cycles {
        for (i, &e) in cycle.iter().enumerate() {
            if probs[e] < gate_threshold {
                continue;
            }
            let mut term = probs[e];
            for (j, &other) in cycle.iter().enumerate() {
                if j != i {
                    term *= 1.0 - probs[other];
                }
            }
            total += term;
        }
    }
    alpha * total
}

fn cycle_penalty_backward(
    probs: &[f64],
    cycles: &[Vec<usize>],
    alpha: f64,
    gate_threshold: f64,
    upstream: f64,
    grad: &mut [f64],
) {
    let scale = alpha * upstream;
    for cycle in cycles {
        for (i, &e) in cycle.iter().enumerate() {
            if probs[e] < gate_threshold {
                continue;
            }
            let mut prod_others = 1.0;
            for (j, &other) in cycle.iter().enumerate() {
                if j != i {
                    prod_others *= 1.0 - probs[other];
                }
            }
            grad[e] += scale * prod_others;
            for (j, &other) in cycle.iter().enumerate() {
                if j == i {
                    continue;
                }
                let mut prod_rest = probs[e];
                for (k, &third) in cycle.iter().enumerate() {
                    if k != i && k != j {
                        prod_rest *= 1.0 - probs[third];
                    }
                }
                grad[other] -= scale * prod_rest;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{max_relative_error, numeric_gradient};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_primitive_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::scalar(0.0));
        let sig = tape.sigmoid(x);
        assert_abs_diff_eq!(tape.value(sig).scalar_value(), 0.5);
        let neg = tape.leaf(Tensor2D::scalar(-3.0));
        let rect = tape.relu(neg);
        assert_abs_diff_eq!(tape.value(rect).scalar_value(), 0.0);

        let eye = tape.leaf(Tensor2D::eye(2));
        let m = tape.leaf(Tensor2D::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let prod = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(prod), tape.value(m));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor2D::zeros(2, 3));
        let b = tape.leaf(Tensor2D::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            NnError::ShapeMismatch {
                op: "matmul",
                lhs: (2, 3),
                rhs: (2, 3)
            }
        );
    }

    #[test]
    fn simple_analytic_gradients() {
        // loss = x^2 at x=3 -> grad 6
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::scalar(3.0));
        let y = tape.hadamard(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_abs_diff_eq!(grads.get(x).unwrap().scalar_value(), 6.0);

        // loss = sigmoid(x) at x=0 -> grad 0.25
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::scalar(0.0));
        let y = tape.sigmoid(x);
        let grads = tape.backward(y).unwrap();
        assert_abs_diff_eq!(grads.get(x).unwrap().scalar_value(), 0.25);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::zeros(2, 2));
        assert_eq!(
            tape.backward(x).unwrap_err(),
            NnError::NonScalarLoss { rows: 2, cols: 2 }
        );
    }

    #[test]
    fn bce_loss_values() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor2D::from_vec(1, 1, vec![0.5]).unwrap());
        let loss = tape.bce_loss(p, Rc::new(vec![1.0])).unwrap();
        assert_abs_diff_eq!(tape.value(loss).scalar_value(), 2.0f64.ln(), epsilon = 1e-12);

        let mut tape = Tape::new();
        let p = tape.leaf(Tensor2D::from_vec(2, 1, vec![0.9, 0.1]).unwrap());
        let loss = tape.bce_loss(p, Rc::new(vec![1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(
            tape.value(loss).scalar_value(),
            -(0.9f64.ln()),
            epsilon = 1e-12
        );

        // perfect predictions cost (numerically) nothing
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor2D::from_vec(2, 1, vec![1.0, 0.0]).unwrap());
        let loss = tape.bce_loss(p, Rc::new(vec![1.0, 0.0])).unwrap();
        assert!(tape.value(loss).scalar_value() < 1e-6);
    }

    #[test]
    fn cycle_penalty_values() {
        let cycles = Rc::new(vec![vec![0, 1, 2]]);
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor2D::from_vec(3, 1, vec![1.0, 0.0, 0.0]).unwrap());
        let loss = tape.cycle_penalty(p, cycles.clone(), 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(tape.value(loss).scalar_value(), 1.0);

        let mut tape = Tape::new();
        let p = tape.leaf(Tensor2D::from_vec(3, 1, vec![1.0, 1.0, 0.0]).unwrap());
        let loss = tape.cycle_penalty(p, cycles.clone(), 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(tape.value(loss).scalar_value(), 0.0);

        let mut tape = Tape::new();
        let p = tape.leaf(Tensor2D::from_vec(3, 1, vec![0.8, 0.3, 0.3]).unwrap());
        let loss = tape.cycle_penalty(p, cycles, 0.01, 0.5).unwrap();
        assert_abs_diff_eq!(
            tape.value(loss).scalar_value(),
            0.01 * (0.8 * 0.7 * 0.7),
            epsilon = 1e-12
        );
    }

    /// Finite-difference check of every primitive with a composite graph
    /// per op kind.
    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..8 {
            let mut random = |r: usize, c: usize| {
                Tensor2D::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap()
            };
            let params = vec![random(3, 2), random(2, 4), random(1, 4), random(3, 4)];
            let arcs = Rc::new(MessageArcs {
                src: vec![0, 1, 2, 1],
                dst: vec![1, 0, 1, 2],
                coeff: vec![0.7, -0.3, 1.2, -0.9],
            });
            let indices = Rc::new(vec![2usize, 0, 1, 2]);
            let build = {
                let arcs = arcs.clone();
                let indices = indices.clone();
                move |tape: &mut Tape, ids: &[TensorId]| -> TensorId {
                    let (a, w, bias, c) = (ids[0], ids[1], ids[2], ids[3]);
                    let agg = tape.edge_weighted_sum(a, arcs.clone());
                    let mixed = tape.add(a, agg).unwrap();
                    let lin = tape.matmul(mixed, w).unwrap();
                    let biased = tape.add(lin, bias).unwrap();
                    let act = tape.relu(biased);
                    let had = tape.hadamard(act, c).unwrap();
                    let gathered = tape.gather_rows(had, indices.clone());
                    let sig = tape.sigmoid(gathered);
                    let cat = tape.concat_cols(sig, gathered).unwrap();
                    let scaled = tape.scale(cat, 1.3);
                    let summed = tape.sum_rows(scaled);
                    let meaned = tape.mean_rows(scaled);
                    let combined = tape.add(summed, meaned).unwrap();
                    tape.mean_all(combined)
                }
            };
            let ids_of = |tape: &mut Tape, ps: &[Tensor2D]| -> Vec<TensorId> {
                ps.iter().map(|p| tape.leaf(p.clone())).collect()
            };
            let mut tape = Tape::new();
            let ids = ids_of(&mut tape, &params);
            let loss = build(&mut tape, &ids);
            let mut grads = tape.backward(loss).unwrap();
            let analytic: Vec<Tensor2D> = ids
                .iter()
                .zip(&params)
                .map(|(&id, p)| grads.take(id, p.shape()))
                .collect();
            let numeric = numeric_gradient(
                |ps| {
                    let mut tape = Tape::new();
                    let ids = ids_of(&mut tape, ps);
                    let loss = build(&mut tape, &ids);
                    tape.value(loss).scalar_value()
                },
                &params,
                1e-5,
            );
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn batch_norm_training_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for training in [true, false] {
            let x = Tensor2D::from_vec(4, 3, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap();
            let gamma =
                Tensor2D::from_vec(1, 3, (0..3).map(|_| rng.random_range(0.5..1.5)).collect())
                    .unwrap();
            let beta =
                Tensor2D::from_vec(1, 3, (0..3).map(|_| rng.random_range(-0.5..0.5)).collect())
                    .unwrap();
            let params = vec![x, gamma, beta];
            let run = move |ps: &[Tensor2D]| -> (f64, Vec<Tensor2D>, bool) {
                let mut running = RunningStats {
                    mean: vec![0.1, -0.2, 0.3],
                    var: vec![1.1, 0.9, 1.3],
                };
                let mut tape = Tape::new();
                let ids: Vec<TensorId> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
                let y = tape
                    .batch_norm(ids[0], ids[1], ids[2], &mut running, training)
                    .unwrap();
                let loss = tape.mean_all(y);
                // weight the output so the gradient is not uniform
                let tag = tape.leaf(Tensor2D::from_vec(4, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
                let weighted = tape.hadamard(y, tag).unwrap();
                let loss2 = tape.mean_all(weighted);
                let total = tape.add(loss, loss2).unwrap();
                let mut grads = tape.backward(total).unwrap();
                let gs = ids
                    .iter()
                    .zip(ps)
                    .map(|(&id, p)| grads.take(id, p.shape()))
                    .collect();
                (tape.value(total).scalar_value(), gs, training)
            };
            let (_, analytic, _) = run(&params);
            let numeric = numeric_gradient(|ps| run(ps).0, &params, 1e-5);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "training={training}: relative error {err}");
        }
    }

    #[test]
    fn batch_norm_training_values_and_running_stats() {
        let mut running = RunningStats::identity(1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::from_vec(2, 1, vec![-1.0, 1.0]).unwrap());
        let gamma = tape.leaf(Tensor2D::filled(1, 1, 1.0));
        let beta = tape.leaf(Tensor2D::zeros(1, 1));
        let y = tape
            .batch_norm(x, gamma, beta, &mut running, true)
            .unwrap();
        let expected = 1.0 / (1.0 + BN_EPSILON).sqrt();
        assert_abs_diff_eq!(tape.value(y).get(0, 0), -expected, epsilon = 1e-12);
        assert_abs_diff_eq!(tape.value(y).get(1, 0), expected, epsilon = 1e-12);
        // momentum update: 0.9 * old + 0.1 * batch
        assert_abs_diff_eq!(running.mean[0], 0.0);
        assert_abs_diff_eq!(running.var[0], 0.9 + 0.1 * 1.0);
    }

    #[test]
    fn batch_norm_inference_is_affine_identity_with_unit_stats() {
        let mut running = RunningStats::identity(2);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::from_vec(1, 2, vec![0.4, -0.7]).unwrap());
        let gamma = tape.leaf(Tensor2D::filled(1, 2, 1.0));
        let beta = tape.leaf(Tensor2D::zeros(1, 2));
        let y = tape
            .batch_norm(x, gamma, beta, &mut running, false)
            .unwrap();
        for c in 0..2 {
            assert_abs_diff_eq!(
                tape.value(y).get(0, c),
                tape.value(x).get(0, c) / (1.0 + BN_EPSILON).sqrt(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn batch_norm_constant_column_yields_shift() {
        let mut running = RunningStats::identity(1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::filled(3, 1, 5.0));
        let gamma = tape.leaf(Tensor2D::filled(1, 1, 2.0));
        let beta = tape.leaf(Tensor2D::filled(1, 1, 0.25));
        let y = tape
            .batch_norm(x, gamma, beta, &mut running, true)
            .unwrap();
        for r in 0..3 {
            assert_abs_diff_eq!(tape.value(y).get(r, 0), 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn batch_norm_rejects_degenerate_batch() {
        let mut running = RunningStats::identity(1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::zeros(1, 1));
        let gamma = tape.leaf(Tensor2D::filled(1, 1, 1.0));
        let beta = tape.leaf(Tensor2D::zeros(1, 1));
        assert_eq!(
            tape.batch_norm(x, gamma, beta, &mut running, true)
                .unwrap_err(),
            NnError::DegenerateBatch { rows: 1 }
        );
    }

    #[test]
    fn bce_and_cycle_penalty_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cycles = Rc::new(vec![vec![0, 1, 2], vec![1, 2, 3, 4]]);
        for _ in 0..6 {
            // keep probabilities away from the gate and clamp boundaries so
            // the finite-difference step does not cross them
            let probs = Tensor2D::from_vec(
                5,
                1,
                (0..5)
                    .map(|_| {
                        let p: f64 = rng.random_range(0.05..0.95);
                        if (p - 0.5).abs() < 0.01 {
                            0.55
                        } else {
                            p
                        }
                    })
                    .collect(),
            )
            .unwrap();
            let target = Rc::new(vec![1.0, 0.0, 1.0, 0.0, 1.0]);
            let params = vec![probs];
            let build = {
                let cycles = cycles.clone();
                let target = target.clone();
                move |ps: &[Tensor2D]| -> (f64, Option<Tensor2D>) {
                    let mut tape = Tape::new();
                    let p = tape.leaf(ps[0].clone());
                    let bce = tape.bce_loss(p, target.clone()).unwrap();
                    let ccl = tape.cycle_penalty(p, cycles.clone(), 0.01, 0.5).unwrap();
                    let total = tape.add(bce, ccl).unwrap();
                    let value = tape.value(total).scalar_value();
                    let mut grads = tape.backward(total).unwrap();
                    (value, Some(grads.take(p, ps[0].shape())))
                }
            };
            let (_, analytic) = build(&params);
            let numeric = numeric_gradient(|ps| build(ps).0, &params, 1e-6);
            let err = max_relative_error(&[analytic.unwrap()], &numeric);
            assert!(err < 1e-5, "relative error {err}");
        }
    }
}
