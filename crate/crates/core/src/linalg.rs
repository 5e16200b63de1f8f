//! Dense linear-algebra helpers on top of nalgebra.

use crate::Real;
use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};
use std::cmp::Ordering;

fn to_faer<T: Real>(m: &DMatrix<T>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].as_f64())
}

fn from_faer<T: Real>(m: MatRef<'_, f64>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| T::lit(m[(i, j)]))
}

/// Symmetric eigendecomposition with eigenpairs sorted by descending
/// eigenvalue. Only the lower triangle of `m` is read.
pub fn sym_eigen_desc<T: Real>(m: DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = m.nrows();
    match to_faer(&m).self_adjoint_eigen(Side::Lower) {
        Ok(eig) => {
            // faer returns ascending order
            let s = eig.S().column_vector();
            let u = eig.U();
            let values = DVector::from_fn(n, |i, _| T::lit(s[n - 1 - i]));
            let vectors = DMatrix::from_fn(n, n, |r, c| T::lit(u[(r, n - 1 - c)]));
            (values, vectors)
        }
        Err(_) => {
            let eig = nalgebra::SymmetricEigen::new(m);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[b]
                    .partial_cmp(&eig.eigenvalues[a])
                    .unwrap_or(Ordering::Equal)
            });
            let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
            let mut vectors = DMatrix::zeros(n, n);
            for (j, &i) in order.iter().enumerate() {
                vectors.set_column(j, &eig.eigenvectors.column(i));
            }
            (values, vectors)
        }
    }
}

/// Cholesky factor of a symmetric positive definite matrix plus a diagonal
/// jitter. Factorization runs in double precision regardless of `T`.
#[derive(Debug, Clone)]
pub struct SpdFactor<T: Real> {
    llt: Llt<f64>,
    jitter: T,
}

impl<T: Real> SpdFactor<T> {
    /// Factors `m + jitter I`, reading only the lower triangle.
    pub fn new(m: &DMatrix<T>, jitter: T) -> Option<Self> {
        let mut a = to_faer(m);
        let j = jitter.as_f64();
        for i in 0..a.nrows() {
            a[(i, i)] += j;
        }
        let llt = a.llt(Side::Lower).ok()?;
        let l = llt.L();
        if (0..l.nrows()).any(|i| !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite()) {
            return None;
        }
        Some(Self { llt, jitter })
    }

    /// Factors `m + jitter I`, multiplying the jitter by 10 on failure from
    /// `start` up to `cap`.
    pub fn with_ladder(m: &DMatrix<T>, start: T, cap: T) -> Option<Self> {
        let mut jitter = start;
        loop {
            if let Some(f) = Self::new(m, jitter) {
                return Some(f);
            }
            if jitter >= cap {
                return None;
            }
            jitter = (jitter * T::lit(10.0)).min(cap);
        }
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let x = self.llt.solve(to_faer(b));
        from_faer(x.as_ref())
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        let n = b.len();
        let rhs = Mat::from_fn(n, 1, |i, _| b[i].as_f64());
        let x = self.llt.solve(rhs);
        DVector::from_fn(n, |i, _| T::lit(x[(i, 0)]))
    }

    pub fn inverse(&self) -> DMatrix<T> {
        from_faer(self.llt.inverse().as_ref())
    }

    pub fn log_det(&self) -> T {
        let l = self.llt.L();
        T::lit(2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
    }

    /// Lower-triangular factor.
    pub fn l(&self) -> DMatrix<T> {
        from_faer(self.llt.L())
    }
}

/// Orthonormal basis of the column space of `m` (thin QR), with the sign of
/// each column fixed so its largest-magnitude entry is positive.
pub fn orthonormal_columns<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    let mut q = m.qr().q();
    fix_column_signs(&mut q);
    q
}

pub fn fix_column_signs<T: Real>(m: &mut DMatrix<T>) {
    for j in 0..m.ncols() {
        let mut best = T::zero();
        let mut sign = T::one();
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v.abs() > best {
                best = v.abs();
                sign = if v < T::zero() { -T::one() } else { T::one() };
            }
        }
        if sign < T::zero() {
            let mut col = m.column_mut(j);
            col.neg_mut();
        }
    }
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    eig.eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b))
}
