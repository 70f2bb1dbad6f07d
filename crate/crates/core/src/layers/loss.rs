use super::{LayerError, Matrix};

/// Mean squared error over every entry, and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), LayerError> {
    if pred.shape() != target.shape() {
        return Err(LayerError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, Matrix::from_vec(pred.rows(), pred.cols(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = Matrix::from_rows(&[[0.3, -2.0]]);
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        let (l, _) = mse_loss(
            &Matrix::from_rows(&[[0.0, 0.0]]),
            &Matrix::from_rows(&[[1.0, 1.0]]),
        )
        .unwrap();
        assert_eq!(l, 1.0);
        let (l, g) = mse_loss(&Matrix::from_rows(&[[2.0]]), &Matrix::from_rows(&[[0.0]])).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn shape_mismatch() {
        assert!(mse_loss(&Matrix::zeros(1, 2), &Matrix::zeros(2, 1)).is_err());
    }
}
