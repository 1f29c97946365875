//! Adam optimizer with classic L2 weight decay.

use super::{NnError, Tensor2D};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. Weight decay is applied as an additive `λ·w` term
/// in the gradient (classic L2 regularization).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first_moment: Vec<Tensor2D>,
    second_moment: Vec<Tensor2D>,
}

impl AdamState {
    pub fn new(params: &[&Tensor2D], config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: params
                .iter()
                .map(|p| Tensor2D::zeros(p.rows(), p.cols()))
                .collect(),
            second_moment: params
                .iter()
                .map(|p| Tensor2D::zeros(p.rows(), p.cols()))
                .collect(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with bias correction; parameters are updated in
    /// place.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor2D],
        grads: &[Tensor2D],
    ) -> Result<(), NnError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NnError::LengthMismatch {
                expected: self.first_moment.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            for i in 0..param.len() {
                let g = grad.data()[i] + c.weight_decay * param.data()[i];
                let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * g;
                let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                param.data_mut()[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Uniform Glorot initialization: U(-a, a) with a = sqrt(6 / (fan_in +
/// fan_out)).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor2D {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor2D::from_vec(
        fan_in,
        fan_out,
        (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect(),
    )
    .expect("length matches by construction")
}
