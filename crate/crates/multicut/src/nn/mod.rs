//! A minimal dense-tensor reverse-mode automatic differentiation engine.
//!
//! Just enough machinery for the solvers in [`crate::gnn`]: linear algebra
//! and elementwise primitives, batch normalization, gather/scatter message
//! passing, BCE and cycle-penalty losses, and the Adam optimizer. All
//! tensors are dense f64 matrices ([`Tensor2D`]); operations record onto a
//! [`Tape`] confined to one thread of execution.

mod adam;
mod tape;
mod tensor;

pub use adam::{glorot_uniform, AdamConfig, AdamState};
pub use tape::{
    bce_value, cycle_penalty_value, Gradients, MessageArcs, RunningStats, Tape, TensorId,
    BCE_PROB_CLAMP, BN_EPSILON, BN_MOMENTUM,
};
pub use tensor::Tensor2D;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("batch normalization in training mode needs at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },
    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("length mismatch: expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Central finite-difference gradients of a scalar function of tensor
/// parameters, used as the independent oracle against tape backpropagation.
pub fn numeric_gradient(
    mut f: impl FnMut(&[Tensor2D]) -> f64,
    params: &[Tensor2D],
    step: f64,
) -> Vec<Tensor2D> {
    let mut work: Vec<Tensor2D> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor2D::zeros(params[p].rows(), params[p].cols());
        for i in 0..params[p].len() {
            let origin = work[p].data()[i];
            work[p].data_mut()[i] = origin + step;
            let up = f(&work);
            work[p].data_mut()[i] = origin - step;
            let down = f(&work);
            work[p].data_mut()[i] = origin;
            grad.data_mut()[i] = (up - down) / (2.0 * step);
        }
        grads.push(grad);
    }
    grads
}

/// Largest relative deviation between two gradient sets, with an absolute
/// floor so near-zero entries do not blow the ratio up.
pub fn max_relative_error(analytic: &[Tensor2D], numeric: &[Tensor2D]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let denom = x.abs().max(y.abs()).max(1e-4);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
