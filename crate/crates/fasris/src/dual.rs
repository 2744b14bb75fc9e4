//! Forward-mode derivatives carried alongside scalars and complex matrices.
//!
//! Each value holds `n` tangents (one per input direction). An empty tangent
//! list is an exact zero derivative, so plain evaluations pay nothing extra.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::Result;
use crate::linalg::{self, CMat, RMat, RealLu};

#[derive(Clone, Debug, PartialEq)]
pub struct DReal {
    pub v: f64,
    pub d: Vec<f64>,
}

impl DReal {
    pub fn cst(v: f64) -> Self {
        Self { v, d: Vec::new() }
    }

    pub fn var(v: f64, i: usize, n: usize) -> Self {
        let mut d = vec![0.0; n];
        d[i] = 1.0;
        Self { v, d }
    }

    pub fn ntan(&self) -> usize {
        self.d.len()
    }

    fn map(&self, v: f64, dv: f64) -> Self {
        Self { v, d: self.d.iter().map(|x| x * dv).collect() }
    }

    pub fn recip(&self) -> Self {
        self.map(1.0 / self.v, -1.0 / (self.v * self.v))
    }

    pub fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.map(s, 0.5 / s)
    }

    pub fn ln_1p(&self) -> Self {
        self.map(self.v.ln_1p(), 1.0 / (1.0 + self.v))
    }

    pub fn powi(&self, k: i32) -> Self {
        self.map(self.v.powi(k), k as f64 * self.v.powi(k - 1))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(self.v * s, s)
    }

    pub fn value_only(&self) -> Self {
        Self::cst(self.v)
    }

    pub fn tangent(&self, i: usize) -> f64 {
        self.d.get(i).copied().unwrap_or(0.0)
    }
}

fn zip_d(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => a.iter().map(|&x| f(x, 0.0)).collect(),
        (true, false) => b.iter().map(|&y| f(0.0, y)).collect(),
        (false, false) => {
            assert_eq!(a.len(), b.len(), "tangent count mismatch");
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        }
    }
}

macro_rules! dreal_binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl $tr<&DReal> for &DReal {
            type Output = DReal;
            fn $m(self, o: &DReal) -> DReal {
                $body(self, o)
            }
        }
        impl $tr<DReal> for DReal {
            type Output = DReal;
            fn $m(self, o: DReal) -> DReal {
                $body(&self, &o)
            }
        }
        impl $tr<&DReal> for DReal {
            type Output = DReal;
            fn $m(self, o: &DReal) -> DReal {
                $body(&self, o)
            }
        }
        impl $tr<DReal> for &DReal {
            type Output = DReal;
            fn $m(self, o: DReal) -> DReal {
                $body(self, &o)
            }
        }
        impl $tr<f64> for &DReal {
            type Output = DReal;
            fn $m(self, o: f64) -> DReal {
                $body(self, &DReal::cst(o))
            }
        }
        impl $tr<f64> for DReal {
            type Output = DReal;
            fn $m(self, o: f64) -> DReal {
                $body(&self, &DReal::cst(o))
            }
        }
    };
}

dreal_binop!(Add, add, |a: &DReal, b: &DReal| DReal { v: a.v + b.v, d: zip_d(&a.d, &b.d, |x, y| x + y) });
dreal_binop!(Sub, sub, |a: &DReal, b: &DReal| DReal { v: a.v - b.v, d: zip_d(&a.d, &b.d, |x, y| x - y) });
dreal_binop!(Mul, mul, |a: &DReal, b: &DReal| DReal {
    v: a.v * b.v,
    d: zip_d(&a.d, &b.d, |x, y| x * b.v + a.v * y)
});
dreal_binop!(Div, div, |a: &DReal, b: &DReal| {
    let q = a.v / b.v;
    DReal { v: q, d: zip_d(&a.d, &b.d, |x, y| (x - q * y) / b.v) }
});

impl Neg for DReal {
    type Output = DReal;
    fn neg(self) -> DReal {
        self.scale(-1.0)
    }
}

impl Neg for &DReal {
    type Output = DReal;
    fn neg(self) -> DReal {
        self.scale(-1.0)
    }
}

pub fn dsum<'a>(it: impl IntoIterator<Item = &'a DReal>) -> DReal {
    it.into_iter().fold(DReal::cst(0.0), |acc, x| acc + x)
}

/// Complex matrix with real-parameter tangents.
#[derive(Clone, Debug)]
pub struct DMat {
    pub v: CMat,
    pub d: Vec<CMat>,
}

impl DMat {
    pub fn cst(v: CMat) -> Self {
        Self { v, d: Vec::new() }
    }

    pub fn ntan(&self) -> usize {
        self.d.len()
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn value_only(&self) -> Self {
        Self::cst(self.v.clone())
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|z| z.norm() == 0.0) && self.d.iter().all(|m| m.iter().all(|z| z.norm() == 0.0))
    }

    pub fn add(&self, o: &DMat) -> DMat {
        DMat { v: &self.v + &o.v, d: zip_m(&self.d, &o.d, |x, y| x + y, self.v.shape()) }
    }

    pub fn sub(&self, o: &DMat) -> DMat {
        DMat { v: &self.v - &o.v, d: zip_m(&self.d, &o.d, |x, y| x - y, self.v.shape()) }
    }

    /// `self * s` for a real dual scalar.
    pub fn scale(&self, s: &DReal) -> DMat {
        let v = self.v.scale(s.v);
        let d = match (self.d.is_empty(), s.d.is_empty()) {
            (true, true) => Vec::new(),
            (false, true) => self.d.iter().map(|m| m.scale(s.v)).collect(),
            (true, false) => s.d.iter().map(|&ds| self.v.scale(ds)).collect(),
            (false, false) => self.d.iter().zip(&s.d).map(|(m, &ds)| m.scale(s.v) + self.v.scale(ds)).collect(),
        };
        DMat { v, d }
    }

    pub fn scale_f(&self, s: f64) -> DMat {
        DMat { v: self.v.scale(s), d: self.d.iter().map(|m| m.scale(s)).collect() }
    }

    /// `self += a * s`, accumulating in place.
    pub fn axpy(&mut self, a: &DMat, s: &DReal) {
        self.v += a.v.scale(s.v);
        let n = self.ntan().max(a.ntan()).max(s.ntan());
        if n == 0 {
            return;
        }
        if self.d.is_empty() {
            self.d = vec![CMat::zeros(self.v.nrows(), self.v.ncols()); n];
        }
        for i in 0..n {
            if !a.d.is_empty() {
                self.d[i] += a.d[i].scale(s.v);
            }
            if !s.d.is_empty() && s.d[i] != 0.0 {
                self.d[i] += a.v.scale(s.d[i]);
            }
        }
    }

    pub fn add_identity(&mut self, s: &DReal) {
        let n = self.v.nrows();
        for i in 0..n {
            self.v[(i, i)] += s.v;
        }
        if s.d.is_empty() {
            return;
        }
        if self.d.is_empty() {
            self.d = vec![CMat::zeros(n, n); s.ntan()];
        }
        for (m, &ds) in self.d.iter_mut().zip(&s.d) {
            for i in 0..n {
                m[(i, i)] += ds;
            }
        }
    }

    pub fn mul(&self, o: &DMat) -> DMat {
        let v = &self.v * &o.v;
        let d = match (self.d.is_empty(), o.d.is_empty()) {
            (true, true) => Vec::new(),
            (false, true) => self.d.iter().map(|m| m * &o.v).collect(),
            (true, false) => o.d.iter().map(|m| &self.v * m).collect(),
            (false, false) => self.d.iter().zip(&o.d).map(|(a, b)| a * &o.v + &self.v * b).collect(),
        };
        DMat { v, d }
    }

    /// Inverse of a Hermitian positive definite matrix with d(A⁻¹) = -A⁻¹ dA A⁻¹.
    pub fn inv_hpd(&self) -> Result<DMat> {
        let vi = linalg::inv_hpd(&self.v)?;
        let d = self.d.iter().map(|m| -(&vi * m * &vi)).collect();
        Ok(DMat { v: vi, d })
    }

    /// Re Tr(self · o).
    pub fn tr_mul(&self, o: &DMat) -> DReal {
        let v = linalg::tr_mul(&self.v, &o.v);
        let d = match (self.d.is_empty(), o.d.is_empty()) {
            (true, true) => Vec::new(),
            (false, true) => self.d.iter().map(|m| linalg::tr_mul(m, &o.v)).collect(),
            (true, false) => o.d.iter().map(|m| linalg::tr_mul(&self.v, m)).collect(),
            (false, false) => self
                .d
                .iter()
                .zip(&o.d)
                .map(|(a, b)| linalg::tr_mul(a, &o.v) + linalg::tr_mul(&self.v, b))
                .collect(),
        };
        DReal { v, d }
    }

    pub fn tr(&self) -> DReal {
        DReal { v: linalg::tr(&self.v), d: self.d.iter().map(linalg::tr).collect() }
    }
}

fn zip_m(a: &[CMat], b: &[CMat], f: impl Fn(&CMat, &CMat) -> CMat, shape: (usize, usize)) -> Vec<CMat> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => a.to_vec(),
        (true, false) => {
            let z = CMat::zeros(shape.0, shape.1);
            b.iter().map(|y| f(&z, y)).collect()
        }
        (false, false) => a.iter().zip(b).map(|(x, y)| f(x, y)).collect(),
    }
}

/// Solves the dense real system `A x = b_j` for several right-hand sides, all dual.
/// `a` is row-major `n×n`. Tangents use dx = A⁻¹(db − dA x).
pub fn solve_dual(a: &[Vec<DReal>], rhs: &[Vec<DReal>], block: &str) -> Result<Vec<Vec<DReal>>> {
    let n = a.len();
    let av = RMat::from_fn(n, n, |i, j| a[i][j].v);
    let lu = RealLu::new(&av, block)?;
    let ntan = a
        .iter()
        .flatten()
        .chain(rhs.iter().flatten())
        .map(DReal::ntan)
        .max()
        .unwrap_or(0);
    let mut out = Vec::with_capacity(rhs.len());
    for b in rhs {
        let bv: Vec<f64> = b.iter().map(|x| x.v).collect();
        let x = lu.solve(&bv);
        let mut dx = vec![Vec::with_capacity(ntan); n];
        for t in 0..ntan {
            let mut r = vec![0.0; n];
            for i in 0..n {
                let mut s = b[i].tangent(t);
                for j in 0..n {
                    s -= a[i][j].tangent(t) * x[j];
                }
                r[i] = s;
            }
            let y = lu.solve(&r);
            for i in 0..n {
                dx[i].push(y[i]);
            }
        }
        out.push(x.into_iter().zip(dx).map(|(v, d)| DReal { v, d }).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn scalar_chain_rule() {
        let x = DReal::var(0.7, 0, 1);
        let y = (&x * &x + 1.0).recip().ln_1p() / x.sqrt();
        let f = |x: f64| (1.0 / (x * x + 1.0)).ln_1p() / x.sqrt();
        let h = 1e-6;
        assert_relative_eq!(y.v, f(0.7));
        assert_relative_eq!(y.d[0], (f(0.7 + h) - f(0.7 - h)) / (2.0 * h), max_relative = 1e-7);
    }

    #[test]
    fn matrix_inverse_tangent() {
        let a0 = CMat::from_fn(3, 3, |i, j| {
            if i == j {
                Complex64::new(3.0 + i as f64, 0.0)
            } else {
                Complex64::new(0.2, 0.1 * (i as f64 - j as f64))
            }
        });
        let da = CMat::from_fn(3, 3, |i, j| Complex64::new(if i == j { 1.0 } else { 0.3 }, 0.0));
        let a = DMat { v: a0.clone(), d: vec![da.clone()] };
        let ai = a.inv_hpd().unwrap();
        let h = 1e-6;
        let fd = (linalg::inv(&(&a0 + da.scale(h))).unwrap() - linalg::inv(&(&a0 - da.scale(h))).unwrap()).scale(0.5 / h);
        assert!((&ai.d[0] - fd).norm() < 1e-8);
    }

    #[test]
    fn dual_solve_matches_fd() {
        let t = DReal::var(0.5, 0, 1);
        let mk = |t: &DReal| {
            vec![
                vec![t.clone() + 2.0, DReal::cst(1.0)],
                vec![t * t, DReal::cst(3.0)],
            ]
        };
        let rhs = vec![vec![t.clone(), DReal::cst(1.0)]];
        let x = solve_dual(&mk(&t), &rhs, "t").unwrap();
        let plain = |tv: f64| {
            let a = RMat::from_row_slice(2, 2, &[tv + 2.0, 1.0, tv * tv, 3.0]);
            let b = nalgebra::DVector::from_column_slice(&[tv, 1.0]);
            a.lu().solve(&b).unwrap()
        };
        let h = 1e-6;
        let fd = (plain(0.5 + h) - plain(0.5 - h)) / (2.0 * h);
        assert_relative_eq!(x[0][0].d[0], fd[0], max_relative = 1e-7);
        assert_relative_eq!(x[0][1].d[0], fd[1], max_relative = 1e-7);
    }
}
