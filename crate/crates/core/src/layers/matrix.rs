use serde::{Deserialize, Serialize};

use super::LayerError;
use crate::par;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

// Output rows handled per GEMM call. Fixed so results do not depend on the
// number of worker threads.
const ROW_BLOCK: usize = 32;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LayerError> {
        if data.len() != rows * cols {
            return Err(LayerError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix, LayerError> {
        if self.rows != other.rows {
            return Err(LayerError::Shape(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Column sums.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix, LayerError> {
        if self.cols != other.cols {
            return Err(LayerError::Shape(format!(
                "matmul_t: {}x{} by ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            Operand::new(&self.data, self.cols as isize, 1),
            Operand::new(&other.data, 1, other.cols as isize),
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LayerError> {
        if self.cols != other.rows {
            return Err(LayerError::Shape(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            Operand::new(&self.data, self.cols as isize, 1),
            Operand::new(&other.data, other.cols as isize, 1),
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    /// `self^T * other`, written into `out` (overwritten when `accumulate` is false).
    pub fn t_matmul_into(
        &self,
        other: &Matrix,
        out: &mut Matrix,
        accumulate: bool,
    ) -> Result<(), LayerError> {
        if self.rows != other.rows || out.shape() != (self.cols, other.cols) {
            return Err(LayerError::Shape(format!(
                "t_matmul: ({}x{})^T by {}x{} into {}x{}",
                self.rows, self.cols, other.rows, other.cols, out.rows, out.cols
            )));
        }
        gemm(
            self.cols,
            self.rows,
            other.cols,
            Operand::new(&self.data, 1, self.cols as isize),
            Operand::new(&other.data, other.cols as isize, 1),
            if accumulate { 1.0 } else { 0.0 },
            &mut out.data,
        );
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> Operand<'a> {
    fn new(data: &'a [f64], rs: isize, cs: isize) -> Self {
        Self { data, rs, cs }
    }
}

/// `c = a * b + beta * c` for an `m x k` operand `a`, a `k x n` operand `b`
/// and a row-major `m x n` output, split into fixed row blocks.
fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    par::for_each_chunk_mut(c, ROW_BLOCK * n, |block, c_rows| {
        let row0 = block * ROW_BLOCK;
        let rows = c_rows.len() / n;
        let a_off = row0 as isize * a.rs;
        // SAFETY: every index touched by dgemm lies inside the checked
        // extents: rows [row0, row0 + rows) of `a` (strides rs, cs over an
        // m x k buffer), all of `b` (k x n) and the row-major `c_rows` block.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a.data.as_ptr().offset(a_off),
                a.rs,
                a.cs,
                b.data.as_ptr(),
                b.rs,
                b.cs,
                beta,
                c_rows.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                c[(i, j)] = (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum();
            }
        }
        c
    }

    fn transpose(a: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t[(j, i)] = a[(i, j)];
            }
        }
        t
    }

    fn filled(rows: usize, cols: usize, seed: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + seed) * 0.37).sin())
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn close(a: &Matrix, b: &Matrix) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn products_match_naive() {
        let a = filled(70, 13, 1.0);
        let b = filled(13, 9, 2.0);
        close(&a.matmul(&b).unwrap(), &naive(&a, &b));
        let bt = transpose(&b);
        close(&a.matmul_t(&bt).unwrap(), &naive(&a, &b));
        let c = filled(70, 5, 3.0);
        let mut out = Matrix::zeros(13, 5);
        a.t_matmul_into(&c, &mut out, false).unwrap();
        close(&out, &naive(&transpose(&a), &c));
        a.t_matmul_into(&c, &mut out, true).unwrap();
        close(&out, &naive(&transpose(&a), &c).map(|v| 2.0 * v));
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&Matrix::zeros(2, 3)).is_err());
        assert!(a.matmul_t(&Matrix::zeros(3, 2)).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(a.hcat(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn hcat_and_col_sums() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[5.0], [6.0]]);
        let c = a.hcat(&b).unwrap();
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);
        assert_eq!(c.col_sums(), vec![4.0, 6.0, 11.0]);
    }
}
