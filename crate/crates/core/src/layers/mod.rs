//! Differentiable building blocks with hand-written backward passes.

mod activation;
mod dense;
pub mod gradcheck;
mod l0dense;
mod loss;
mod matrix;

use rand::Rng;
use thiserror::Error;

use crate::gates::GateError;

pub use activation::{elu, elu_grad, Elu};
pub use dense::DenseLayer;
pub use gradcheck::{gradient_check, BlockReport, GradCheckReport};
pub use l0dense::{GateGranularity, L0DenseLayer};
pub use loss::mse_loss;
pub use matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("train mode needs gate noise")]
    MissingNoise,
    #[error("backward called before forward")]
    NoForwardCache,
    #[error(transparent)]
    Gate(#[from] GateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Callback receiving `(name, values, grads)`.
pub type Visit<'a> = dyn FnMut(&str, &[f64], &[f64]) + 'a;
/// Mutable counterpart of [`Visit`].
pub type VisitMut<'a> = dyn FnMut(&str, &mut [f64], &mut [f64]) + 'a;

/// Visits trainable parameter blocks in a fixed order.
pub trait Parameters {
    /// Calls `f(name, values, grads)` for every block.
    fn visit_params(&self, f: &mut Visit<'_>);

    /// Mutable variant, same order.
    fn visit_params_mut(&mut self, f: &mut VisitMut<'_>);

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, _, g| g.iter_mut().for_each(|x| *x = 0.0));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, v, _| n += v.len());
        n
    }

    /// Copies of all parameter values, one vector per block.
    fn param_values(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, v, _| out.push(v.to_vec()));
        out
    }

    fn param_grads(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, _, g| out.push(g.to_vec()));
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, _, _| out.push(n.to_string()));
        out
    }

    /// Overwrites parameter values block by block; panics on shape mismatch.
    fn set_param_values(&mut self, values: &[Vec<f64>]) {
        let mut i = 0;
        self.visit_params_mut(&mut |name, v, _| {
            assert_eq!(v.len(), values[i].len(), "block {name} has wrong length");
            v.copy_from_slice(&values[i]);
            i += 1;
        });
        assert_eq!(i, values.len(), "wrong number of parameter blocks");
    }
}

/// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_weights<R: Rng + ?Sized>(rng: &mut R, out_dim: usize, in_dim: usize) -> Matrix {
    let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
    let data = (0..out_dim * in_dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(out_dim, in_dim, data).expect("sized above")
}
