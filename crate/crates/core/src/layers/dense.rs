use rand::Rng;

use super::{init_weights, LayerError, Matrix, Parameters, Visit, VisitMut};

/// Fully connected layer `Y = X W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub weight_grad: Matrix,
    pub bias_grad: Option<Vec<f64>>,
    input: Option<Matrix>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self, LayerError> {
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
        Ok(Self {
            weight,
            bias,
            weight_grad,
            bias_grad,
            input: None,
        })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let w = init_weights(rng, out_dim, in_dim);
        let b = bias.then(|| vec![0.0; out_dim]);
        Self::new(w, b).expect("consistent shapes")
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Forward pass; keeps the input for [`DenseLayer::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix, LayerError> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Forward pass without caching.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix, LayerError> {
        affine(x, &self.weight, self.bias.as_deref())
    }

    /// Accumulates `dW += dY^T X`, `db += colsum(dY)` and returns `dX = dY W`.
    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix, LayerError> {
        let x = self.input.as_ref().ok_or(LayerError::NoForwardCache)?;
        if dy.rows() != x.rows() || dy.cols() != self.out_dim() {
            return Err(LayerError::Shape(format!(
                "upstream gradient {}x{} for output {}x{}",
                dy.rows(),
                dy.cols(),
                x.rows(),
                self.out_dim()
            )));
        }
        dy.t_matmul_into(x, &mut self.weight_grad, true)?;
        if let Some(bg) = &mut self.bias_grad {
            for (g, s) in bg.iter_mut().zip(dy.col_sums()) {
                *g += s;
            }
        }
        dy.matmul(&self.weight)
    }
}

/// `x w^T + b`, shared by the dense and gated layers.
pub(crate) fn affine(x: &Matrix, w: &Matrix, b: Option<&[f64]>) -> Result<Matrix, LayerError> {
    if x.cols() != w.cols() {
        return Err(LayerError::Shape(format!(
            "input has {} features, layer expects {}",
            x.cols(),
            w.cols()
        )));
    }
    let mut y = x.matmul_t(w)?;
    if let Some(b) = b {
        for i in 0..y.rows() {
            for (v, bj) in y.row_mut(i).iter_mut().zip(b) {
                *v += bj;
            }
        }
    }
    Ok(y)
}

impl Parameters for DenseLayer {
    fn visit_params(&self, f: &mut Visit<'_>) {
        f("weight", self.weight.data(), self.weight_grad.data());
        if let (Some(b), Some(g)) = (&self.bias, &self.bias_grad) {
            f("bias", b, g);
        }
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
    }
}
