use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dense::affine;
use super::{init_weights, LayerError, Matrix, Mode, Parameters, Visit, VisitMut};
use crate::gates::{
    deterministic_gates, pathwise_gate_grad, penalty_and_grad, sample_gates, GateCache, GateConfig,
    GateVector,
};

/// Which weights share a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateGranularity {
    /// One gate per input feature, shared by every output (column of `W`).
    #[default]
    PerInput,
    /// One gate per weight.
    PerElement,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Matrix,
    mask: Vec<f64>,
    masked_weight: Matrix,
    gate: Option<GateCache>,
}

/// Dense layer whose weights are multiplied by hard-concrete gates.
#[derive(Debug, Clone)]
pub struct L0DenseLayer {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub gates: GateVector,
    pub granularity: GateGranularity,
    pub config: GateConfig,
    /// Coefficient of `0.5 * weight_decay * |W|^2`.
    pub weight_decay: f64,
    pub weight_grad: Matrix,
    pub bias_grad: Option<Vec<f64>>,
    pub log_alpha_grad: Vec<f64>,
    cache: Option<ForwardCache>,
}

impl L0DenseLayer {
    pub fn new(
        weight: Matrix,
        bias: Option<Vec<f64>>,
        gates: GateVector,
        granularity: GateGranularity,
        config: GateConfig,
    ) -> Result<Self, LayerError> {
        config.validate()?;
        let expected = gate_count(granularity, weight.rows(), weight.cols());
        if gates.len() != expected {
            return Err(LayerError::Shape(format!(
                "{} gates for a {}x{} weight, expected {expected}",
                gates.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(LayerError::Shape(format!(
                    "bias has {} entries for {} outputs",
                    b.len(),
                    weight.rows()
                )));
            }
        }
        let weight_grad = Matrix::zeros(weight.rows(), weight.cols());
        let bias_grad = bias.as_ref().map(|b| vec![0.0; b.len()]);
        let log_alpha_grad = vec![0.0; gates.len()];
        Ok(Self {
            weight,
            bias,
            gates,
            granularity,
            config,
            weight_decay: 0.0,
            weight_grad,
            bias_grad,
            log_alpha_grad,
            cache: None,
        })
    }

    /// Random init: uniform weights, zero bias, `log_alpha ~ N(logit(1 - droprate), 0.01)`.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        granularity: GateGranularity,
        config: GateConfig,
        droprate_init: f64,
    ) -> Result<Self, LayerError> {
        if !(droprate_init > 0.0 && droprate_init < 1.0) {
            return Err(LayerError::Shape(format!(
                "droprate_init must lie in (0, 1), got {droprate_init}"
            )));
        }
        let w = init_weights(rng, out_dim, in_dim);
        let b = bias.then(|| vec![0.0; out_dim]);
        let mean = (1.0 - droprate_init).ln() - droprate_init.ln();
        let normal = Normal::new(mean, 0.01).expect("positive std");
        let n = gate_count(granularity, out_dim, in_dim);
        let log_alpha = (0..n).map(|_| normal.sample(rng)).collect();
        Self::new(w, b, GateVector::new(log_alpha), granularity, config)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Test-time gate values.
    pub fn deterministic_mask(&self) -> Vec<f64> {
        deterministic_gates(&self.gates, &self.config)
    }

    /// Weight matrix with test-time gates applied.
    pub fn sparse_weight(&self) -> Matrix {
        self.masked(&self.deterministic_mask())
    }

    fn masked(&self, z: &[f64]) -> Matrix {
        let mut w = self.weight.clone();
        match self.granularity {
            GateGranularity::PerInput => {
                for i in 0..w.rows() {
                    for (v, zj) in w.row_mut(i).iter_mut().zip(z) {
                        *v *= zj;
                    }
                }
            }
            GateGranularity::PerElement => {
                for (v, zj) in w.data_mut().iter_mut().zip(z) {
                    *v *= zj;
                }
            }
        }
        w
    }

    /// Forward pass; `noise` must be given in train mode (one uniform per gate).
    pub fn forward(
        &mut self,
        x: &Matrix,
        mode: Mode,
        noise: Option<&[f64]>,
    ) -> Result<Matrix, LayerError> {
        let (mask, gate) = match mode {
            Mode::Train => {
                let noise = noise.ok_or(LayerError::MissingNoise)?;
                let (z, cache) = sample_gates(&self.gates, &self.config, noise)?;
                (z, Some(cache))
            }
            Mode::Infer => (self.deterministic_mask(), None),
        };
        let masked_weight = self.masked(&mask);
        let y = affine(x, &masked_weight, self.bias.as_deref())?;
        self.cache = Some(ForwardCache {
            input: x.clone(),
            mask,
            masked_weight,
            gate,
        });
        Ok(y)
    }

    /// Inference without caching.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix, LayerError> {
        affine(x, &self.sparse_weight(), self.bias.as_deref())
    }

    /// Accumulates gradients for weight, bias and (after a train-mode
    /// forward) `log_alpha`; returns the input gradient.
    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix, LayerError> {
        let cache = self.cache.as_ref().ok_or(LayerError::NoForwardCache)?;
        if dy.rows() != cache.input.rows() || dy.cols() != self.out_dim() {
            return Err(LayerError::Shape(format!(
                "upstream gradient {}x{} for output {}x{}",
                dy.rows(),
                dy.cols(),
                cache.input.rows(),
                self.out_dim()
            )));
        }
        let mut d_masked = Matrix::zeros(self.out_dim(), self.in_dim());
        dy.t_matmul_into(&cache.input, &mut d_masked, false)?;
        let dx = dy.matmul(&cache.masked_weight)?;

        let cols = self.in_dim();
        let mut dz = vec![0.0; self.gates.len()];
        for i in 0..self.out_dim() {
            let dm = d_masked.row(i);
            let w = self.weight.row(i);
            let wg = self.weight_grad.row_mut(i);
            for j in 0..cols {
                let g = match self.granularity {
                    GateGranularity::PerInput => j,
                    GateGranularity::PerElement => i * cols + j,
                };
                wg[j] += dm[j] * cache.mask[g];
                dz[g] += dm[j] * w[j];
            }
        }
        if let Some(bg) = &mut self.bias_grad {
            for (g, s) in bg.iter_mut().zip(dy.col_sums()) {
                *g += s;
            }
        }
        if let Some(gc) = &cache.gate {
            let dzda = pathwise_gate_grad(gc, &self.gates, &self.config)?;
            for ((g, a), b) in self.log_alpha_grad.iter_mut().zip(&dz).zip(&dzda) {
                *g += a * b;
            }
        }
        Ok(dx)
    }

    /// Expected number of active gates (unweighted).
    pub fn penalty(&self) -> f64 {
        penalty_and_grad(&self.gates, &self.config).0
    }

    /// `lambda * penalty + 0.5 * weight_decay * |W|^2`.
    pub fn regularization(&self) -> f64 {
        let mut r = self.config.lambda * self.penalty();
        if self.weight_decay != 0.0 {
            let sq: f64 = self.weight.data().iter().map(|w| w * w).sum();
            r += 0.5 * self.weight_decay * sq;
        }
        r
    }

    /// Adds the gradient of [`L0DenseLayer::regularization`].
    pub fn add_regularization_grad(&mut self) {
        let (_, grad) = penalty_and_grad(&self.gates, &self.config);
        let lambda = self.config.lambda;
        for (g, p) in self.log_alpha_grad.iter_mut().zip(grad) {
            *g += lambda * p;
        }
        if self.weight_decay != 0.0 {
            let wd = self.weight_decay;
            for (g, w) in self
                .weight_grad
                .data_mut()
                .iter_mut()
                .zip(self.weight.data())
            {
                *g += wd * w;
            }
        }
    }
}

fn gate_count(granularity: GateGranularity, out_dim: usize, in_dim: usize) -> usize {
    match granularity {
        GateGranularity::PerInput => in_dim,
        GateGranularity::PerElement => out_dim * in_dim,
    }
}

impl Parameters for L0DenseLayer {
    fn visit_params(&self, f: &mut Visit<'_>) {
        f("weight", self.weight.data(), self.weight_grad.data());
        if let (Some(b), Some(g)) = (&self.bias, &self.bias_grad) {
            f("bias", b, g);
        }
        f("log_alpha", self.gates.log_alpha(), &self.log_alpha_grad);
    }

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_>) {
        f(
            "weight",
            self.weight.data_mut(),
            self.weight_grad.data_mut(),
        );
        if let (Some(b), Some(g)) = (&mut self.bias, &mut self.bias_grad) {
            f("bias", b, g);
        }
        f(
            "log_alpha",
            self.gates.log_alpha_mut(),
            &mut self.log_alpha_grad,
        );
    }
}
