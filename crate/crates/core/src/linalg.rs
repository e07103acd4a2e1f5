//! Dense complex linear algebra at the small fixed sizes used by the rest of
//! the crate (2x2 and 4x4 operators, 2px2p real-symmetric blocks).
//!
//! Everything here is written for matrices of dimension at most 8; there are
//! no sparse or blocked formats. Comparisons always take an explicit absolute
//! tolerance — never exact float equality.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Default tolerance for Hermiticity checks.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Default residual bound for `inverse_small` round trips.
pub const INVERSION_TOL: f64 = 1e-9;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

/// Summary of how far a matrix is from being Hermitian.
#[derive(Debug, Clone, Copy)]
pub struct HermitianCheckReport {
    /// max over (i, j) of |A[i][j] - conj(A[j][i])|
    pub max_asymmetry: f64,
}

impl HermitianCheckReport {
    pub fn is_hermitian_at(&self, tol: f64) -> bool {
        self.max_asymmetry <= tol
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1);
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        assert!(rows.iter().all(|row| row.len() == c));
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Diagonal matrix from real entries.
    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = C64::new(e, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product, row-major block convention:
    /// `out[(i*p + k, j*q + l)] = self[(i, j)] * other[(k, l)]`.
    pub fn kron(&self, other: &Self) -> Self {
        let (p, q) = (other.rows, other.cols);
        let mut out = Self::zeros(self.rows * p, self.cols * q);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                for k in 0..p {
                    for l in 0..q {
                        out[(i * p + k, j * q + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch("add: dimensions differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch("sub: dimensions differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= *b;
        }
        Ok(out)
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    /// Real part of the trace. Errors if the residual imaginary part exceeds
    /// `tol`, which signals a malformed density matrix or POVM element.
    pub fn trace_real(&self, tol: f64) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::ShapeMismatch("trace of non-square matrix".into()));
        }
        let tr: C64 = (0..self.rows).map(|i| self[(i, i)]).sum();
        if tr.im.abs() > tol {
            return Err(Error::NonRealTrace {
                imag: tr.im,
                tol,
            });
        }
        Ok(tr.re)
    }

    pub fn hermitian_report(&self) -> HermitianCheckReport {
        let mut max_asym: f64 = 0.0;
        if self.is_square() {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    let d = (self[(i, j)] - self[(j, i)].conj()).norm();
                    max_asym = max_asym.max(d);
                }
            }
        } else {
            max_asym = f64::INFINITY;
        }
        HermitianCheckReport {
            max_asymmetry: max_asym,
        }
    }

    /// All eigenvalues of a Hermitian matrix, ascending.
    ///
    /// The complex Hermitian problem is embedded as the real symmetric
    /// `[[Re A, -Im A], [Im A, Re A]]`, whose spectrum is that of `A` with
    /// every eigenvalue doubled; a cyclic Jacobi sweep solves the embedding
    /// and every second sorted value is returned.
    pub fn sym_eigvals(&self) -> Result<Vec<f64>> {
        let report = self.hermitian_report();
        if !report.is_hermitian_at(HERMITICITY_TOL) {
            return Err(Error::NotHermitian {
                max_asymmetry: report.max_asymmetry,
                tol: HERMITICITY_TOL,
            });
        }
        let n = self.rows;
        let mut embed = vec![0.0; 4 * n * n];
        let m = 2 * n;
        for i in 0..n {
            for j in 0..n {
                let z = self[(i, j)];
                embed[i * m + j] = z.re;
                embed[(i + n) * m + (j + n)] = z.re;
                embed[i * m + (j + n)] = -z.im;
                embed[(i + n) * m + j] = z.im;
            }
        }
        let mut eig = jacobi_eigvals(&mut embed, m);
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(eig.into_iter().step_by(2).collect())
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    ///
    /// Intended for matrices of size <= 8. Fails with the offending pivot
    /// magnitude when the matrix is singular or too ill-conditioned for the
    /// round-trip residual `||A A^-1 - I||_max <= 1e-9` to be meaningful.
    pub fn inverse_small(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::ShapeMismatch("inverse of non-square matrix".into()));
        }
        let n = self.rows;
        assert!(n <= 8, "inverse_small is for matrices of size <= 8");
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale: f64 = self
            .data
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for col in 0..n {
            let mut piv = col;
            for r in (col + 1)..n {
                if a[(r, col)].norm() > a[(piv, col)].norm() {
                    piv = r;
                }
            }
            let pmag = a[(piv, col)].norm();
            // relative pivot threshold 1e-12 acts as the condition estimate
            if pmag < 1e-12 * scale {
                return Err(Error::Singular { pivot: pmag });
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                    inv.data.swap(col * n + j, piv * n + j);
                }
            }
            let d = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= d;
                inv[(col, j)] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    let ac = a[(col, j)];
                    let ic = inv[(col, j)];
                    a[(r, j)] -= f * ac;
                    inv[(r, j)] -= f * ic;
                }
            }
        }
        Ok(inv)
    }

    /// max over entries of |self - other|.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// ||U^dag U - I||_max; zero for a unitary matrix.
    pub fn unitarity_defect(&self) -> f64 {
        let prod = self.dagger().matmul(self).expect("square");
        prod.max_abs_diff(&Self::identity(self.rows))
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.max_abs_diff(other) <= tol
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dense real symmetric matrix (full row-major storage).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from full row data, symmetrizing by averaging (the inputs we
    /// see are symmetric up to rounding).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n));
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Set entry (i, j) and its mirror.
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// self += c * other
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * *b;
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Eigenvalues, ascending, by cyclic Jacobi.
    pub fn eigvals(&self) -> Vec<f64> {
        let mut work = self.data.clone();
        let mut eig = jacobi_eigvals(&mut work, self.n);
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eig
    }

    pub fn min_eigval(&self) -> f64 {
        self.eigvals()[0]
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigval() >= -tol
    }

    pub fn inverse(&self) -> Result<Self> {
        let c = self.to_complex().inverse_small()?;
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.data[i * self.n + j] = 0.5 * (c[(i, j)].re + c[(j, i)].re);
            }
        }
        Ok(out)
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.n, self.n, |i, j| C64::new(self.get(i, j), 0.0))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Tr(A B) for symmetric A, B.
    pub fn trace_product(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Cyclic Jacobi eigenvalue sweep on a real symmetric matrix stored row-major
/// in `a` (destroyed). Returns unsorted eigenvalues (the final diagonal).
fn jacobi_eigvals(a: &mut [f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    let idx = |i: usize, j: usize| i * n + j;
    // scale for the off-diagonal convergence threshold
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-14 * norm;
    for _sweep in 0..64 {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[idx(i, j)].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[idx(i, i)]).collect()
}

/// The Pauli matrices and 2x2 identity.
pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_rows(&[
        vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    ])
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_rows(&[
        vec![C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
        vec![C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
    ])
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::diag(&[1.0, -1.0])
}
