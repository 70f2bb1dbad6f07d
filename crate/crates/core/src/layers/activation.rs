use super::{LayerError, Matrix};

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// ELU activation that remembers its input for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Elu {
    input: Option<Matrix>,
}

impl Elu {
    pub fn forward(&mut self, x: &Matrix) -> Matrix {
        self.input = Some(x.clone());
        x.map(elu)
    }

    pub fn backward(&self, dy: &Matrix) -> Result<Matrix, LayerError> {
        let x = self.input.as_ref().ok_or(LayerError::NoForwardCache)?;
        if x.shape() != dy.shape() {
            return Err(LayerError::Shape(format!(
                "elu backward: {:?} vs {:?}",
                dy.shape(),
                x.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xi, &g)| g * elu_grad(xi))
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    }
}
