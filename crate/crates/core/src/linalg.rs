//! Dense complex matrices and the spectral primitives the rest of the crate
//! builds on.
//!
//! Matrices are stored row-major. Whenever a matrix is flattened into real
//! numbers (network inputs and outputs, DDPG states and actions) the layout
//! is column-major: all real parts column by column, then all imaginary parts
//! in the same order. [`complex_to_realvec`] and [`realvec_to_complex`] are the
//! only two places that know this layout.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{len_mismatch, shape_mismatch, Error, Result};

pub type C64 = Complex64;

/// Relative tolerance used for Hermitian checks.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// A plain vector of reals, used for network inputs and outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealVector(pub Vec<f64>);

impl RealVector {
    pub fn zeros(len: usize) -> Self {
        RealVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for RealVector {
    fn from(v: Vec<f64>) -> Self {
        RealVector(v)
    }
}

impl Deref for RealVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RealVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(len_mismatch("CMatrix::new", rows * cols, data.len()));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a real matrix from row slices.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let cols = rows[0].len();
        CMatrix::from_fn(rows.len(), cols, |i, j| C64::new(rows[i][j], 0.0))
    }

    /// Column vector (n × 1).
    pub fn column(entries: Vec<C64>) -> Self {
        let n = entries.len();
        assert!(n > 0, "column vector must be non-empty");
        CMatrix {
            rows: n,
            cols: 1,
            data: entries,
        }
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

    /// Row-major entries.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(shape_mismatch("matmul", self.shape(), other.shape()));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.rows * other.cols];
        for i in 0..self.rows {
            let out_row = &mut out[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: other.cols,
            data: out,
        })
    }

    pub fn conj_transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        self.map(|z| z * s)
    }

    pub fn scale_c(&self, s: C64) -> CMatrix {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| f(*z)).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &CMatrix,
        op: &'static str,
        f: impl Fn(C64, C64) -> C64,
    ) -> Result<CMatrix> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(op, self.shape(), other.shape()));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// `self · diag(d)`: scales column j by `d[j]`.
    pub fn mul_diag_right(&self, d: &[C64]) -> Result<CMatrix> {
        if d.len() != self.cols {
            return Err(len_mismatch("mul_diag_right", self.cols, d.len()));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            self[(i, j)] * d[j]
        }))
    }

    /// `diag(d) · self`: scales row i by `d[i]`.
    pub fn mul_diag_left(&self, d: &[C64]) -> Result<CMatrix> {
        if d.len() != self.rows {
            return Err(len_mismatch("mul_diag_left", self.rows, d.len()));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            d[i] * self[(i, j)]
        }))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        frob_norm_sq(self)
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm_sq(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Frobenius norm of `self − selfᴴ`.
    pub fn hermitian_residual(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Checks Hermitian symmetry relative to the Frobenius norm.
    pub fn check_hermitian(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(shape_mismatch(
                "hermitian check",
                self.shape(),
                (self.cols, self.rows),
            ));
        }
        let residual = self.hermitian_residual();
        if residual > HERMITIAN_TOL * self.frob_norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NotHermitian { residual });
        }
        Ok(())
    }

    /// `(self + selfᴴ) / 2`.
    pub fn hermitian_part(&self) -> CMatrix {
        CMatrix::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        })
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn matmul(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    a.matmul(b)
}

pub fn conj_transpose(a: &CMatrix) -> CMatrix {
    a.conj_transpose()
}

/// Sum of squared moduli of all entries.
pub fn frob_norm_sq(x: &CMatrix) -> f64 {
    x.data.iter().map(|z| z.norm_sqr()).sum()
}

/// Lower-triangular Cholesky factor `L` with `x = L Lᴴ`.
///
/// Only the lower triangle of `x` is read.
pub fn cholesky(x: &CMatrix) -> Result<CMatrix> {
    let n = x.rows();
    if n != x.cols() {
        return Err(shape_mismatch("cholesky", x.shape(), (x.cols(), x.rows())));
    }
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = x[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = x[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// `log₂ det(x)` for a Hermitian positive-definite matrix.
///
/// Tries Cholesky first; if that breaks down the Hermitian eigendecomposition
/// decides positive-definiteness.
pub fn logdet_capacity(x: &CMatrix) -> Result<f64> {
    x.check_hermitian()?;
    let h = x.hermitian_part();
    match cholesky(&h) {
        Ok(l) => Ok((0..l.rows()).map(|i| l[(i, i)].re.log2()).sum::<f64>() * 2.0),
        Err(Error::NotPositiveDefinite) => {
            let (vals, _) = hermitian_eig(&h)?;
            if vals.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::NotPositiveDefinite);
            }
            Ok(vals.iter().map(|v| v.log2()).sum())
        }
        Err(e) => Err(e),
    }
}

/// Eigendecomposition of a Hermitian matrix. Eigenvalues are sorted in
/// descending order; column i of the returned matrix is the eigenvector for
/// eigenvalue i.
pub fn hermitian_eig(x: &CMatrix) -> Result<(RealVector, CMatrix)> {
    x.check_hermitian()?;
    let h = x.hermitian_part();
    let eig = nalgebra::SymmetricEigen::new(h.to_nalgebra());
    let n = h.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    if !vectors.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok((RealVector(values), vectors))
}

/// Flattens `x` as column-major real parts followed by column-major
/// imaginary parts.
pub fn complex_to_realvec(x: &CMatrix) -> RealVector {
    let n = x.rows() * x.cols();
    let mut out = vec![0.0; 2 * n];
    let mut k = 0;
    for j in 0..x.cols() {
        for i in 0..x.rows() {
            let z = x[(i, j)];
            out[k] = z.re;
            out[n + k] = z.im;
            k += 1;
        }
    }
    RealVector(out)
}

/// Inverse of [`complex_to_realvec`].
pub fn realvec_to_complex(v: &[f64], rows: usize, cols: usize) -> Result<CMatrix> {
    let n = rows * cols;
    if v.len() != 2 * n {
        return Err(len_mismatch("realvec_to_complex", 2 * n, v.len()));
    }
    let mut m = CMatrix::new(rows, cols, vec![C64::new(0.0, 0.0); n])?;
    let mut k = 0;
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = C64::new(v[k], v[n + k]);
            k += 1;
        }
    }
    Ok(m)
}
