//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

/// Eigenvalues above this (negative) floor are treated as roundoff and clipped to zero.
pub const PSD_FLOOR: f64 = -1e-10;

/// Condition numbers above this make small real solves fail.
pub const COND_LIMIT: f64 = 1e12;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in i..n {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitian_part(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(a.nrows(), idx.len(), |r, cc| eig.eigenvectors[(r, idx[cc])]);
    (vals, vecs)
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    eigh(a).0.first().copied().unwrap_or(0.0)
}

/// Fails if `a` is not Hermitian or has an eigenvalue below [`PSD_FLOOR`].
pub fn check_psd(a: &CMat, what: &str) -> Result<()> {
    if !is_hermitian(a, 1e-9) {
        return Err(Error::Domain(format!("{what} is not Hermitian")));
    }
    let lmin = min_eigenvalue(a);
    if lmin < PSD_FLOOR {
        return Err(Error::Domain(format!("{what} has eigenvalue {lmin:e} below {PSD_FLOOR:e}")));
    }
    Ok(())
}

/// Principal square root of a Hermitian PSD matrix.
pub fn sqrtm_psd(a: &CMat) -> Result<CMat> {
    let (vals, v) = eigh(a);
    if let Some(&lmin) = vals.first() {
        if lmin < PSD_FLOOR {
            return Err(Error::Domain(format!("square root of matrix with eigenvalue {lmin:e}")));
        }
    }
    let n = a.nrows();
    let mut vs = v.clone();
    for (j, &l) in vals.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        for i in 0..n {
            vs[(i, j)] *= s;
        }
    }
    Ok(hermitian_part(&(&vs * v.adjoint())))
}

/// Inverse of a Hermitian positive definite matrix (Cholesky, LU fallback).
pub fn inv_hpd(a: &CMat) -> Result<CMat> {
    if let Some(ch) = hermitian_part(a).cholesky() {
        return Ok(ch.inverse());
    }
    inv(a)
}

pub fn inv(a: &CMat) -> Result<CMat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix in inverse".into()))
}

/// Re Tr(AB) without forming the product.
pub fn tr_mul(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let m = a.ncols();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..m {
            let x = a[(i, j)];
            let y = b[(j, i)];
            s += x.re * y.re - x.im * y.im;
        }
    }
    s
}

pub fn tr(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// 1-norm condition number estimate of a small real matrix via its explicit inverse.
pub fn cond1(a: &RMat, inv: &RMat) -> f64 {
    norm1(a) * norm1(inv)
}

fn norm1(a: &RMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization of a small real system with a condition-number guard.
pub struct RealLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub cond: f64,
}

impl RealLu {
    pub fn new(a: &RMat, block: &str) -> Result<Self> {
        let lu = a.clone().lu();
        let ainv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("{block} is singular")))?;
        let cond = cond1(a, &ainv);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::Numerical(format!("{block} condition number {cond:e} exceeds {COND_LIMIT:e}")));
        }
        Ok(Self { lu, cond })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(b);
        self.lu.solve(&rhs).expect("factorization checked non-singular").iter().copied().collect()
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let lt = self.lu.l().transpose();
        let ut = self.lu.u().transpose();
        // A = P^T L U, so A^T y = b  <=>  U^T L^T P y = b.
        let mut w = DVector::from_column_slice(b);
        ut.solve_lower_triangular_mut(&mut w);
        lt.solve_upper_triangular_mut(&mut w);
        let mut y = vec![0.0; n];
        let mut perm = DVector::from_fn(n, |i, _| i as f64);
        self.lu.p().permute_rows(&mut perm);
        for i in 0..n {
            y[perm[i] as usize] = w[i];
        }
        y
    }
}

pub fn rmat_from_rows(rows: &[Vec<f64>]) -> RMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    RMat::from_fn(n, m, |i, j| rows[i][j])
}

/// Pairwise (cascade) summation; order-independent of how the slice was produced.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}
