//! Small dense matrices. Dimensions here are the number of taxa in one
//! subtree, so everything is plain row-major `Vec<f64>`.

use std::fmt;

use crate::error::{invalid, Result};

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged matrix rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add(&other.scale(-1.0))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.add_to(i, j, a * other.get(k, j));
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Square matrix stored exactly symmetric: construction averages the two
/// triangles, so `get(i, j) == get(j, i)` bit for bit.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix(Matrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        SymMatrix(Matrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    /// Symmetrizes `m` as `(m + mᵀ) / 2`.
    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(invalid(format!(
                "expected a square matrix, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let n = m.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            out.set(i, i, m.get(i, i));
            for j in i + 1..n {
                let v = 0.5 * (m.get(i, j) + m.get(j, i));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        Ok(SymMatrix(out))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::symmetrize(&Matrix::from_rows(rows)?)
    }

    /// Builds from the upper triangle produced by `f(i, j)` with `i <= j`.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        SymMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(self.0.scale(s))
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(self.0.add(&other.0))
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(self.0.sub(&other.0))
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.0.matvec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// Keeps only the rows and columns flagged in `keep`.
    pub fn submatrix(&self, keep: &[bool]) -> SymMatrix {
        let idx: Vec<usize> = (0..self.dim()).filter(|&i| keep[i]).collect();
        SymMatrix::from_upper(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym{:?}", self.0)
    }
}

/// `diag(p) − p pᵀ`, the multinomial covariance kernel.
pub fn multinomial_kernel(p: &[f64]) -> SymMatrix {
    SymMatrix::from_upper(p.len(), |i, j| {
        let outer = p[i] * p[j];
        if i == j {
            p[i] - outer
        } else {
            -outer
        }
    })
}
