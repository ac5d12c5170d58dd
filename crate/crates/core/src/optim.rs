//! Trainable parameters and the Adadelta update.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adadelta {
    /// Decay of both running averages.
    pub rho: f64,
    pub eps: f64,
}

impl Default for Adadelta {
    fn default() -> Self {
        Adadelta { rho: 0.9, eps: 1e-6 }
    }
}

/// A value with its gradient buffer and Adadelta accumulators, all of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<S> {
    value: Tensor<S>,
    grad: Tensor<S>,
    /// Running average of squared gradients.
    sq_grad: Tensor<S>,
    /// Running average of squared updates.
    sq_update: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(value: Tensor<S>) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            value,
            grad: Tensor::zeros(&shape),
            sq_grad: Tensor::zeros(&shape),
            sq_update: Tensor::zeros(&shape),
        }
    }

    /// Rebuilds a parameter from stored state. `None` if shapes disagree or an
    /// accumulator is negative.
    pub fn from_parts(value: Tensor<S>, sq_grad: Tensor<S>, sq_update: Tensor<S>) -> Option<Self> {
        let shape = value.shape();
        if sq_grad.shape() != shape || sq_update.shape() != shape {
            return None;
        }
        let non_negative = |t: &Tensor<S>| t.data().iter().all(|&v| v >= S::zero());
        if !non_negative(&sq_grad) || !non_negative(&sq_update) {
            return None;
        }
        let grad = Tensor::zeros(shape);
        Some(Parameter {
            value,
            grad,
            sq_grad,
            sq_update,
        })
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    /// Direct access to the values; the optimiser state is left untouched.
    pub fn value_mut(&mut self) -> &mut Tensor<S> {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor<S> {
        &self.grad
    }

    pub fn sq_grad(&self) -> &Tensor<S> {
        &self.sq_grad
    }

    pub fn sq_update(&self) -> &Tensor<S> {
        &self.sq_update
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<S>) {
        self.grad.add_assign(g);
    }

    /// Drops optimiser history (used for newborn offspring).
    pub fn reset_state(&mut self) {
        self.grad.fill(S::zero());
        self.sq_grad.fill(S::zero());
        self.sq_update.fill(S::zero());
    }

    /// One Adadelta update from the accumulated gradient, which is then cleared.
    pub fn adadelta_step(&mut self, opt: &Adadelta) {
        let rho = S::lit(opt.rho);
        let one_minus_rho = S::one() - rho;
        let eps = S::lit(opt.eps);
        let values = self.value.data_mut();
        let grads = self.grad.data_mut();
        let eg = self.sq_grad.data_mut();
        let ex = self.sq_update.data_mut();
        for i in 0..values.len() {
            let g = grads[i];
            eg[i] = rho * eg[i] + one_minus_rho * g * g;
            let delta = -((ex[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g;
            ex[i] = rho * ex[i] + one_minus_rho * delta * delta;
            values[i] += delta;
            grads[i] = S::zero();
        }
    }
}
