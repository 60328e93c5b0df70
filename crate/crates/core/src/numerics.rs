//! Small dense linear algebra in `f64`.
//!
//! Everything here is sized for state-space work (a handful of rows) and for
//! the tiny sequence models in [`crate::neural`]. Matrices are row-major.
//! Shape mismatches are programming errors and panic with both shapes in the
//! message; factorization failures are returned as [`NumericsError`].

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seeded generator used everywhere randomness appears: ChaCha with 8 rounds
/// (`rand_chacha::ChaCha8Rng`), seeded through `SeedableRng::seed_from_u64`.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not positive definite (leading minor {minor} failed)")]
    NotPositiveDefinite { minor: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatRepr> for Mat {
    type Error = String;

    fn try_from(r: MatRepr) -> Result<Self, Self::Error> {
        if r.data.len() != r.rows * r.cols {
            return Err(format!(
                "matrix {}x{} needs {} entries, got {}",
                r.rows,
                r.cols,
                r.rows * r.cols,
                r.data.len()
            ));
        }
        if r.data.iter().any(|v| !v.is_finite()) {
            return Err("matrix entries must be finite".into());
        }
        Ok(Mat { rows: r.rows, cols: r.cols, data: r.data })
    }
}

impl From<Mat> for MatRepr {
    fn from(m: Mat) -> Self {
        MatRepr { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}[", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

impl Mat {
    /// Builds a matrix from row-major entries.
    ///
    /// Panics if the length does not match or an entry is not finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix {rows}x{cols} needs {} entries, got {}",
            rows * cols,
            data.len()
        );
        assert!(data.iter().all(|v| v.is_finite()), "matrix entries must be finite");
        Mat { rows, cols, data }
    }

    /// Unchecked constructor for intermediate results (training code may
    /// legitimately produce non-finite values that are detected later).
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        debug_assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Mat {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), m, "ragged rows: expected {m} columns, got {}", r.len());
            data.extend_from_slice(r);
        }
        Mat::new(n, m, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        Mat::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Mat {
        let n = values.len();
        let mut m = Mat::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Column matrix holding `v`.
    pub fn column(v: &Vector) -> Mat {
        Mat::from_raw(v.len(), 1, v.0.clone())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat::from_raw(rows, cols, data)
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vector {
        Vector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows, "column length {} vs {} rows", v.len(), self.rows);
        for (i, x) in v.iter().enumerate() {
            self.data[i * self.cols + j] = *x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Shorthand for [`Mat::transpose`].
    pub fn t(&self) -> Mat {
        self.transpose()
    }

    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(
            self.cols, rhs.rows,
            "mat_mul shape mismatch: {}x{} times {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[p * m..(p + 1) * m];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Mat::from_raw(n, m, out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(
            self.rows, rhs.rows,
            "t_matmul shape mismatch: ({}x{})ᵀ times {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (k, n, m) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let lhs_row = &self.data[p * n..(p + 1) * n];
            let rhs_row = &rhs.data[p * m..(p + 1) * m];
            for (i, a) in lhs_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (o, b) in out[i * m..(i + 1) * m].iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Mat::from_raw(n, m, out)
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Mat) -> Mat {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_t shape mismatch: {}x{} times ({}x{})ᵀ",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (n, m) = (self.rows, rhs.rows);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out[i * m + j] = a.iter().zip(rhs.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        Mat::from_raw(n, m, out)
    }

    pub fn mat_vec(&self, v: &Vector) -> Vector {
        assert_eq!(
            self.cols,
            v.len(),
            "mat_vec shape mismatch: {}x{} times vector of length {}",
            self.rows,
            self.cols,
            v.len()
        );
        Vector(
            (0..self.rows)
                .map(|i| self.row(i).iter().zip(&v.0).map(|(a, b)| a * b).sum())
                .collect(),
        )
    }

    fn assert_same_shape(&self, other: &Mat, op: &str) {
        assert!(
            self.shape() == other.shape(),
            "{op} shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.assert_same_shape(other, "mat_add");
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.assert_same_shape(other, "mat_sub");
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::from_raw(self.rows, self.cols, self.data.iter().map(|v| f(*v)).collect())
    }

    pub fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        self.assert_same_shape(other, "zip_map");
        Mat::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        )
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Mat) -> Mat {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add_assign_scaled(&mut self, other: &Mat, s: f64) {
        self.assert_same_shape(other, "add_assign_scaled");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square(), "trace of non-square {}x{}", self.rows, self.cols);
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    /// `(M + Mᵀ) / 2`; the result is exactly symmetric.
    pub fn symmetrize(&self) -> Mat {
        assert!(self.is_square(), "symmetrize of non-square {}x{}", self.rows, self.cols);
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                out.data[i * n + j] = v;
                out.data[j * n + i] = v;
            }
        }
        out
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&self.mat_vec(x))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.assert_same_shape(other, "max_abs_diff");
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    /// Rows `start..start+len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Mat {
        assert!(start + len <= self.rows, "row block {start}+{len} exceeds {} rows", self.rows);
        Mat::from_raw(len, self.cols, self.data[start * self.cols..(start + len) * self.cols].to_vec())
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[Mat]) -> Mat {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            assert_eq!(b.cols, cols, "vstack column mismatch: {} vs {}", b.cols, cols);
            data.extend_from_slice(&b.data);
            rows += b.rows;
        }
        Mat::from_raw(rows, cols, data)
    }

    /// Sub-matrix of the given row and column index sets.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Mat {
        Mat::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    /// Lower-triangular `L` with `L Lᵀ = self`.
    ///
    /// Fails with the 1-based index of the first leading minor that is not
    /// positive.
    pub fn cholesky(&self) -> Result<Mat, NumericsError> {
        assert!(self.is_square(), "cholesky of non-square {}x{}", self.rows, self.cols);
        let n = self.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(NumericsError::NotPositiveDefinite { minor: j + 1 });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(l)
    }

    /// Cholesky factor that tolerates exactly-degenerate directions.
    ///
    /// A pivot within `tol · scale` of zero gets a zero column, provided the
    /// rest of that column is also negligible. Used to sample from
    /// semidefinite covariances such as `Q = 0`.
    pub fn cholesky_psd(&self) -> Result<Mat, NumericsError> {
        assert!(self.is_square(), "cholesky of non-square {}x{}", self.rows, self.cols);
        let n = self.rows;
        let tol = 1e-12 * self.max_abs().max(f64::MIN_POSITIVE);
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            if d.abs() <= tol {
                for i in (j + 1)..n {
                    let mut s = self[(i, j)];
                    for p in 0..j {
                        s -= l[(i, p)] * l[(j, p)];
                    }
                    if s.abs() > tol.sqrt().max(tol) {
                        return Err(NumericsError::NotPositiveDefinite { minor: j + 1 });
                    }
                }
                continue;
            }
            if d < 0.0 || !d.is_finite() {
                return Err(NumericsError::NotPositiveDefinite { minor: j + 1 });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(l)
    }

    fn check_symmetric(&self) -> Result<(), NumericsError> {
        let asymmetry = self.asymmetry();
        if asymmetry > 1e-10 * self.max_abs().max(1.0) {
            return Err(NumericsError::NotSymmetric { asymmetry });
        }
        Ok(())
    }

    /// Solves `self · X = b` for symmetric positive definite `self`.
    pub fn solve_spd(&self, b: &Mat) -> Result<Mat, NumericsError> {
        assert_eq!(
            self.rows, b.rows,
            "solve shape mismatch: {}x{} against {}x{}",
            self.rows, self.cols, b.rows, b.cols
        );
        self.check_symmetric()?;
        let l = self.cholesky()?;
        Ok(cholesky_solve(&l, b))
    }

    /// log |self| for symmetric positive definite `self`.
    pub fn log_det_spd(&self) -> Result<f64, NumericsError> {
        let l = self.cholesky()?;
        Ok((0..self.rows).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0)
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.symmetrize();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-30 * (1.0 + a.frobenius_norm().powi(2)) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }
}

fn cholesky_solve(l: &Mat, b: &Mat) -> Mat {
    let n = l.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        // forward: L z = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for p in 0..i {
                s -= l[(i, p)] * x[(p, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ x = z
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for p in (i + 1)..n {
                s -= l[(p, i)] * x[(p, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &Mat) -> Result<Mat, NumericsError> {
    assert!(a.is_square(), "spd_inverse of non-square {}x{}", a.rows, a.cols);
    let inv = a.solve_spd(&Mat::identity(a.rows))?;
    Ok(inv.symmetrize())
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    a.matmul(b)
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Mat {
    type Output = Mat;

    fn mul(self, rhs: &Mat) -> Mat {
        self.matmul(rhs)
    }
}

impl Add for &Mat {
    type Output = Mat;

    fn add(self, rhs: &Mat) -> Mat {
        Mat::add(self, rhs)
    }
}

impl Sub for &Mat {
    type Output = Mat;

    fn sub(self, rhs: &Mat) -> Mat {
        Mat::sub(self, rhs)
    }
}

impl AddAssign<&Mat> for Mat {
    fn add_assign(&mut self, rhs: &Mat) {
        self.add_assign_scaled(rhs, 1.0);
    }
}

/// Dense real vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector{:?}", self.0)
    }
}

impl Vector {
    /// Panics on non-finite entries.
    pub fn new(entries: Vec<f64>) -> Vector {
        assert!(entries.iter().all(|v| v.is_finite()), "vector entries must be finite");
        Vector(entries)
    }

    pub(crate) fn from_raw(entries: Vec<f64>) -> Vector {
        Vector(entries)
    }

    pub fn zeros(n: usize) -> Vector {
        Vector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot length mismatch: {} vs {}", self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "vector add length mismatch: {} vs {}", self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "vector sub length mismatch: {} vs {}", self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * s).collect())
    }

    /// `self · otherᵀ`.
    pub fn outer(&self, other: &Vector) -> Mat {
        Mat::from_fn(self.len(), other.len(), |i, j| self.0[i] * other.0[j])
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector::new(v)
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Max-shifted softmax over a slice.
pub fn softmax_slice(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "softmax of an empty vector");
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax(v: &Vector) -> Vector {
    Vector(softmax_slice(v.as_slice()))
}

/// One draw from `N(mean, cov)` using a semidefinite-tolerant Cholesky factor.
pub fn sample_gaussian(mean: &Vector, cov: &Mat, rng: &mut SimRng) -> Result<Vector, NumericsError> {
    let l = cov.cholesky_psd()?;
    Ok(sample_gaussian_with_factor(mean, &l, rng))
}

/// Like [`sample_gaussian`] with a precomputed lower factor of the covariance.
pub fn sample_gaussian_with_factor(mean: &Vector, chol: &Mat, rng: &mut SimRng) -> Vector {
    assert_eq!(chol.rows(), mean.len(), "factor {}x{} vs mean length {}", chol.rows(), chol.cols(), mean.len());
    let z = Vector((0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    mean.add(&chol.mat_vec(&z))
}

/// `log N(x | mean, cov)`.
pub fn gaussian_log_density(x: &Vector, mean: &Vector, cov: &Mat) -> Result<f64, NumericsError> {
    let l = cov.cholesky()?;
    let d = x.sub(mean);
    let z = cholesky_solve(&l, &Mat::column(&d));
    let maha: f64 = d.iter().zip(z.data()).map(|(a, b)| a * b).sum();
    let log_det: f64 = 2.0 * (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let n = x.len() as f64;
    Ok(-0.5 * (maha + log_det + n * (2.0 * std::f64::consts::PI).ln()))
}
