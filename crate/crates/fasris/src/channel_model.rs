//! Correlation matrices, path loss, port selection and correlated Rayleigh sampling.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dual::DMat;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub m: usize,
    pub k: usize,
    pub m_tot: usize,
    pub l: usize,
}

impl Dimensions {
    pub fn new(m: usize, k: usize, m_tot: usize, l: usize) -> Result<Self> {
        if m == 0 || k == 0 || l == 0 {
            return Err(Error::Invalid(format!("dimensions must be positive (M={m}, K={k}, L={l})")));
        }
        if m > m_tot {
            return Err(Error::Invalid(format!("M={m} exceeds M_tot={m_tot}")));
        }
        Ok(Self { m, k, m_tot, l })
    }

    pub fn c1(&self) -> f64 {
        self.k as f64 / self.m as f64
    }

    pub fn c2(&self) -> f64 {
        self.k as f64 / self.l as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarFasGeometry {
    pub wx: f64,
    pub wy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl PlanarFasGeometry {
    pub fn m_tot(&self) -> usize {
        self.nx * self.ny
    }

    /// Grid coordinates of port `i`; ports run top to bottom, then left to right.
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i / self.ny, i % self.ny)
    }

    fn spacing(n: usize, w: f64, axis: &str) -> Result<f64> {
        if n == 0 {
            return Err(Error::DegenerateGrid(format!("no ports along {axis}")));
        }
        if n == 1 {
            if w != 0.0 {
                return Err(Error::DegenerateGrid(format!("single port along {axis} with aperture {w}")));
            }
            return Ok(0.0);
        }
        if !(w > 0.0) {
            return Err(Error::DegenerateGrid(format!("aperture along {axis} must be positive")));
        }
        Ok(w / (n as f64 - 1.0))
    }
}

/// Port correlation of a planar fluid-antenna array, J0 of the port distance in wavelengths.
pub fn fas_correlation_matrix(g: &PlanarFasGeometry) -> Result<CMat> {
    let sx = PlanarFasGeometry::spacing(g.nx, g.wx, "x")?;
    let sy = PlanarFasGeometry::spacing(g.ny, g.wy, "y")?;
    let n = g.m_tot();
    Ok(CMat::from_fn(n, n, |i, j| {
        let (xi, yi) = g.coords(i);
        let (xj, yj) = g.coords(j);
        let dx = xi.abs_diff(xj) as f64 * sx;
        let dy = yi.abs_diff(yj) as f64 * sy;
        c(libm::j0(2.0 * PI * (dx * dx + dy * dy).sqrt()))
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RisAngularProfile {
    pub dc: f64,
    pub alpha: f64,
    pub beta: f64,
    pub l: usize,
}

const QUAD_TOL: f64 = 1e-10;
const GL_ORDER: usize = 20;

fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_ORDER;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    let dp = {
                        let (mut q0, mut q1) = (1.0, z);
                        for k in 2..=n {
                            let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                            q0 = q1;
                            q1 = q2;
                        }
                        n as f64 * (z * q1 - q0) / (z * z - 1.0)
                    };
                    x[i] = z;
                    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                    break;
                }
            }
        }
        (x, w)
    })
}

fn gl_panel(f: &impl Fn(f64) -> Complex64, a: f64, b: f64) -> Complex64 {
    let (x, w) = gauss_legendre();
    let h = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    x.iter().zip(w).map(|(&xi, &wi)| f(m + h * xi) * wi).sum::<Complex64>() * h
}

/// Adaptive Gauss-Legendre quadrature with absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> Complex64, a: f64, b: f64, tol: f64) -> Result<Complex64> {
    fn rec(f: &impl Fn(f64) -> Complex64, a: f64, b: f64, whole: Complex64, tol: f64, depth: u32) -> Result<Complex64> {
        let m = 0.5 * (a + b);
        let left = gl_panel(f, a, m);
        let right = gl_panel(f, m, b);
        let err = (left + right - whole).norm();
        if err <= tol {
            return Ok(left + right);
        }
        if depth == 0 {
            return Err(Error::Precision { estimate: err });
        }
        Ok(rec(f, a, m, left, 0.5 * tol, depth - 1)? + rec(f, m, b, right, 0.5 * tol, depth - 1)?)
    }
    let whole = gl_panel(&f, a, b);
    rec(&f, a, b, whole, tol, 40)
}

/// Correlation coefficient at element offset `d` for a uniform linear array with a
/// (truncated, unnormalized) Gaussian angular spread.
pub fn ris_correlation_coefficient(dc: f64, alpha: f64, beta: f64, d: i64) -> Result<Complex64> {
    let norm = 1.0 / (2.0 * PI * beta * beta).sqrt();
    let f = |phi: f64| {
        let g = norm * (-(phi - alpha).powi(2) / (2.0 * beta * beta)).exp();
        Complex64::from_polar(g, 2.0 * PI * dc * d as f64 * (PI * phi / 180.0).sin())
    };
    integrate(f, -180.0, 180.0, QUAD_TOL)
}

pub fn ris_correlation_matrix(p: &RisAngularProfile) -> Result<CMat> {
    if !(p.dc > 0.0) || !(p.beta > 0.0) || p.l == 0 {
        return Err(Error::Invalid(format!("invalid angular profile {p:?}")));
    }
    let vals = (0..p.l as i64)
        .map(|d| ris_correlation_coefficient(p.dc, p.alpha, p.beta, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(CMat::from_fn(p.l, p.l, |m, n| {
        if m >= n {
            vals[m - n]
        } else {
            vals[n - m].conj()
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub gain: f64,
    pub exponent: f64,
    pub distance: f64,
}

pub fn path_loss(p: &PathLossParams) -> Result<f64> {
    if !(p.distance > 0.0) || !(p.exponent > 0.0) || !(p.gain > 0.0) {
        return Err(Error::Invalid(format!("invalid path-loss parameters {p:?}")));
    }
    Ok(p.gain / p.distance.powf(p.exponent))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// BS/RIS/user placement giving per-user direct (u) and cascaded (t) gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub gain_db: f64,
    pub d_bs_ris: f64,
    pub d_ris_user: Vec<f64>,
    pub angle_deg: f64,
    pub exp_bs_ris: f64,
    pub exp_ris_user: f64,
    pub exp_bs_user: f64,
    /// Replaces the cosine-rule BS-user distances when present.
    pub d_bs_user: Option<Vec<f64>>,
}

impl LinkGeometry {
    pub fn bs_user_distances(&self) -> Vec<f64> {
        if let Some(d) = &self.d_bs_user {
            return d.clone();
        }
        let d1 = self.d_bs_ris;
        let cosa = self.angle_deg.to_radians().cos();
        self.d_ris_user.iter().map(|&d2| (d1 * d1 + d2 * d2 - 2.0 * cosa * d1 * d2).sqrt()).collect()
    }

    /// Returns (u, t).
    pub fn gains(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = db_to_linear(self.gain_db);
        let pl = |d: f64, e: f64| path_loss(&PathLossParams { gain: g, exponent: e, distance: d });
        let bs_ris = pl(self.d_bs_ris, self.exp_bs_ris)?;
        let t = self.d_ris_user.iter().map(|&d| Ok(bs_ris * pl(d, self.exp_ris_user)?)).collect::<Result<Vec<_>>>()?;
        let dbu = self.bs_user_distances();
        if dbu.len() != t.len() {
            return Err(Error::Invalid("BS-user distance count differs from user count".into()));
        }
        let u = dbu.iter().map(|&d| pl(d, self.exp_bs_user)).collect::<Result<Vec<_>>>()?;
        Ok((u, t))
    }
}

/// Port selection vector, binary (exactly M ones) or relaxed (entries in [0,1], sum ≤ M).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortSelection {
    s: Vec<f64>,
    binary: bool,
}

impl PortSelection {
    pub fn all(m_tot: usize) -> Self {
        Self { s: vec![1.0; m_tot], binary: true }
    }

    pub fn from_indices(m_tot: usize, idx: &[usize], m: usize) -> Result<Self> {
        let mut s = vec![0.0; m_tot];
        for &i in idx {
            if i >= m_tot {
                return Err(Error::Constraint(format!("port index {i} out of range {m_tot}")));
            }
            s[i] = 1.0;
        }
        Self::binary(s, m)
    }

    pub fn binary(s: Vec<f64>, m: usize) -> Result<Self> {
        if s.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::Constraint("binary selection has non-binary entries".into()));
        }
        let ones = s.iter().filter(|&&x| x == 1.0).count();
        if ones != m {
            return Err(Error::Constraint(format!("selection has {ones} ports, expected {m}")));
        }
        Ok(Self { s, binary: true })
    }

    pub fn relaxed(s: Vec<f64>, m: usize) -> Result<Self> {
        if s.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Constraint("relaxed selection entries must lie in [0,1]".into()));
        }
        let sum: f64 = s.iter().sum();
        if sum > m as f64 + 1e-9 {
            return Err(Error::Constraint(format!("relaxed selection sums to {sum} > {m}")));
        }
        let binary = s.iter().all(|&x| x == 0.0 || x == 1.0) && s.iter().filter(|&&x| x == 1.0).count() == m;
        Ok(Self { s, binary })
    }

    /// Uniform baseline: ports 1 + (m-1)·⌊M_tot/(M-1)⌋ (1-based).
    pub fn uniform(m_tot: usize, m: usize) -> Result<Self> {
        if m == 0 || m > m_tot {
            return Err(Error::Constraint(format!("cannot pick {m} of {m_tot} ports")));
        }
        if m == 1 {
            return Self::from_indices(m_tot, &[0], 1);
        }
        let step = m_tot / (m - 1);
        let idx: Vec<usize> = (0..m).map(|i| i * step).collect();
        if idx[m - 1] >= m_tot {
            let step = (m_tot - 1) / (m - 1);
            let idx: Vec<usize> = (0..m).map(|i| i * step).collect();
            return Self::from_indices(m_tot, &idx, m);
        }
        Self::from_indices(m_tot, &idx, m)
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn m_tot(&self) -> usize {
        self.s.len()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.s.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect()
    }
}

/// RIS phase shifts, stored as angles in [0, 2π).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseShifts {
    phi: Vec<f64>,
}

impl PhaseShifts {
    pub fn new(phi: Vec<f64>) -> Self {
        Self { phi: phi.into_iter().map(|p| p.rem_euclid(2.0 * PI)).collect() }
    }

    pub fn zeros(l: usize) -> Self {
        Self { phi: vec![0.0; l] }
    }

    pub fn angles(&self) -> &[f64] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn diag(&self) -> CMat {
        CMat::from_diagonal(&crate::linalg::CVec::from_iterator(
            self.phi.len(),
            self.phi.iter().map(|&p| Complex64::from_polar(1.0, p)),
        ))
    }
}

pub fn select_submatrix(a_tot: &CMat, s: &PortSelection) -> Result<CMat> {
    if !s.is_binary() {
        return Err(Error::Constraint("submatrix selection needs a binary selection".into()));
    }
    if s.m_tot() != a_tot.nrows() {
        return Err(Error::Constraint(format!("selection length {} vs matrix size {}", s.m_tot(), a_tot.nrows())));
    }
    let idx = s.indices();
    Ok(CMat::from_fn(idx.len(), idx.len(), |i, j| a_tot[(idx[i], idx[j])]))
}

/// diag(s) A diag(s): the covariance of diag(s)·h_tot; zero rows/columns off the support.
pub fn embed_pad(a_tot: &CMat, s: &PortSelection) -> CMat {
    let v = s.values();
    CMat::from_fn(a_tot.nrows(), a_tot.ncols(), |i, j| a_tot[(i, j)] * (v[i] * v[j]))
}

/// A^{1/2} diag(s) A^{1/2}, the smooth surrogate used for relaxed port optimization.
pub fn embed_surrogate(a_tot_sqrt: &CMat, s: &PortSelection) -> CMat {
    let v = s.values();
    let mut left = a_tot_sqrt.clone();
    for (j, &sj) in v.iter().enumerate() {
        left.column_mut(j).scale_mut(sj);
    }
    linalg::hermitian_part(&(left * a_tot_sqrt))
}

/// (C_k^{+/2}, C_k) with C_k^{+/2} = √t C_L^{1/2} Φ C_R^{1/2}.
pub fn effective_ris_correlation(c_l_sqrt: &CMat, phi: &PhaseShifts, c_r_sqrt: &CMat, t: f64) -> (CMat, CMat) {
    let mut lp = c_l_sqrt.clone();
    for (j, &p) in phi.angles().iter().enumerate() {
        let mut col = lp.column_mut(j);
        col *= Complex64::from_polar(1.0, p);
    }
    let cplus = (lp * c_r_sqrt).scale(t.sqrt());
    let ck = linalg::hermitian_part(&(&cplus * cplus.adjoint()));
    (cplus, ck)
}

/// Φ C_R Φ^H.
fn rotate(c_r: &CMat, phi: &[f64]) -> CMat {
    CMat::from_fn(c_r.nrows(), c_r.ncols(), |p, q| c_r[(p, q)] * Complex64::from_polar(1.0, phi[p] - phi[q]))
}

/// All L derivatives of C_L^{1/2} Φ C_R Φ^H C_L^{1/2} with respect to the phases.
pub fn phase_tangents(c_l_sqrt: &CMat, c_r: &CMat, phi: &[f64]) -> Vec<CMat> {
    let n = phi.len();
    let s = c_l_sqrt;
    (0..n)
        .map(|l| {
            // Row l and column l of G_l ∘ C_R.
            let row = crate::linalg::CVec::from_fn(n, |q, _| {
                if q == l {
                    c(0.0)
                } else {
                    Complex64::i() * Complex64::from_polar(1.0, phi[l] - phi[q]) * c_r[(l, q)]
                }
            });
            let col = crate::linalg::CVec::from_fn(n, |p, _| {
                if p == l {
                    c(0.0)
                } else {
                    -Complex64::i() * Complex64::from_polar(1.0, phi[p] - phi[l]) * c_r[(p, l)]
                }
            });
            let a = s.column(l).into_owned();
            let rs = row.transpose() * s;
            let sc = s * col;
            let b = s.row(l).into_owned();
            &a * rs + sc * b
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    Uncommon,
    Common,
    Iid,
}

/// BS- and RIS-side correlation matrices. Shared matrices are stored once.
#[derive(Clone, Debug)]
pub struct CorrelationSet {
    pub mode: CorrelationMode,
    pub r_tot: CMat,
    pub f_tot: Vec<CMat>,
    pub c_l: CMat,
    pub c_r: Vec<CMat>,
}

impl CorrelationSet {
    pub fn f_tot(&self, k: usize) -> &CMat {
        &self.f_tot[if self.f_tot.len() == 1 { 0 } else { k }]
    }

    pub fn c_r(&self, k: usize) -> &CMat {
        &self.c_r[if self.c_r.len() == 1 { 0 } else { k }]
    }

    pub fn identity(m_tot: usize, l: usize) -> Self {
        Self {
            mode: CorrelationMode::Iid,
            r_tot: linalg::eye(m_tot),
            f_tot: vec![linalg::eye(m_tot)],
            c_l: linalg::eye(l),
            c_r: vec![linalg::eye(l)],
        }
    }
}

/// The full problem statement: dimensions, correlations, gains, powers and noise.
#[derive(Clone, Debug)]
pub struct Scenario {
    dims: Dimensions,
    corr: CorrelationSet,
    u: Vec<f64>,
    t: Vec<f64>,
    p: Vec<f64>,
    sigma2: f64,
    r_sqrt: CMat,
    f_sqrt: Vec<CMat>,
    c_l_sqrt: CMat,
    c_r_sqrt: Vec<CMat>,
}

/// Deterministic-equivalent inputs at a given (s, Φ): F_k = u_k F_{c,k}, R, C_k.
#[derive(Clone, Debug)]
pub struct Stats {
    pub m: usize,
    pub l: usize,
    pub f: Vec<DMat>,
    pub r: DMat,
    pub c: Vec<DMat>,
    /// Shared F and C (without u_k, t_k) in the common/iid modes.
    pub common: Option<(DMat, DMat)>,
    pub u: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma2: f64,
}

impl Stats {
    /// Per-user statistics from raw matrices. `u`/`t` are unused in this mode and set to 1.
    pub fn uncommon(m: usize, l: usize, f: Vec<CMat>, r: CMat, c: Vec<CMat>, p: Vec<f64>, sigma2: f64) -> Result<Self> {
        let k = f.len();
        if c.len() != k || p.len() != k {
            return Err(Error::Invalid("F_k, C_k and p must have K entries".into()));
        }
        for a in f.iter().chain(std::iter::once(&r)) {
            if a.nrows() != m || a.ncols() != m {
                return Err(Error::Invalid(format!("BS-side matrices must be {m}x{m}")));
            }
        }
        if c.iter().any(|a| a.nrows() != l || a.ncols() != l) {
            return Err(Error::Invalid(format!("RIS-side matrices must be {l}x{l}")));
        }
        Ok(Stats {
            m,
            l,
            f: f.into_iter().map(DMat::cst).collect(),
            r: DMat::cst(r),
            c: c.into_iter().map(DMat::cst).collect(),
            common: None,
            u: vec![1.0; k],
            t: vec![1.0; k],
            p,
            sigma2,
        })
    }

    /// Shared F, R, C with per-user gains.
    #[allow(clippy::too_many_arguments)]
    pub fn common(m: usize, l: usize, f: CMat, r: CMat, c: CMat, u: Vec<f64>, t: Vec<f64>, p: Vec<f64>, sigma2: f64) -> Result<Self> {
        let k = u.len();
        if t.len() != k || p.len() != k {
            return Err(Error::Invalid("u, t and p must have K entries".into()));
        }
        let fk = u.iter().map(|&x| f.scale(x)).collect();
        let ck = t.iter().map(|&x| c.scale(x)).collect();
        let mut st = Stats::uncommon(m, l, fk, r, ck, p, sigma2)?;
        st.common = Some((DMat::cst(f), DMat::cst(c)));
        st.u = u;
        st.t = t;
        Ok(st)
    }

    pub fn k(&self) -> usize {
        self.f.len()
    }

    pub fn ntan(&self) -> usize {
        self.f
            .iter()
            .chain(self.c.iter())
            .chain(std::iter::once(&self.r))
            .map(DMat::ntan)
            .max()
            .unwrap_or(0)
    }

    pub fn value_only(&self) -> Stats {
        Stats {
            m: self.m,
            l: self.l,
            f: self.f.iter().map(DMat::value_only).collect(),
            r: self.r.value_only(),
            c: self.c.iter().map(DMat::value_only).collect(),
            common: self.common.as_ref().map(|(a, b)| (a.value_only(), b.value_only())),
            u: self.u.clone(),
            t: self.t.clone(),
            p: self.p.clone(),
            sigma2: self.sigma2,
        }
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Stats {
        self.sigma2 = sigma2;
        self
    }

    pub fn homogeneous(&self) -> bool {
        let same = |v: &[f64]| v.iter().all(|&x| (x - v[0]).abs() <= 1e-14 * v[0].abs().max(1e-300));
        self.common.is_some() && same(&self.u) && same(&self.t) && same(&self.p)
    }
}

/// Square-root factors used to draw channels at a fixed (s, Φ).
#[derive(Clone, Debug)]
pub struct SamplingFactors {
    pub m: usize,
    pub l: usize,
    /// √u_k F_k^{1/2}.
    pub f_half: Vec<CMat>,
    pub r_half: CMat,
    /// C_k^{+/2}.
    pub c_plus: Vec<CMat>,
}

#[derive(Clone, Debug)]
pub struct ChannelSample {
    pub h: CMat,
    pub x: CMat,
    pub w: CMat,
    pub y: CMat,
    pub z: Vec<CMat>,
}

impl Scenario {
    pub fn new(dims: Dimensions, corr: CorrelationSet, u: Vec<f64>, t: Vec<f64>, p: Vec<f64>, sigma2: f64) -> Result<Self> {
        let k = dims.k;
        if u.len() != k || t.len() != k || p.len() != k {
            return Err(Error::Invalid(format!("per-user vectors must have length K={k}")));
        }
        if u.iter().chain(&t).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Invalid("gains must be finite and non-negative".into()));
        }
        if p.iter().any(|&x| !(x > 0.0)) || !(sigma2 > 0.0) {
            return Err(Error::Invalid("powers and noise must be positive".into()));
        }
        let per_user_ok = |n: usize| n == 1 || n == k;
        if !per_user_ok(corr.f_tot.len()) || !per_user_ok(corr.c_r.len()) {
            return Err(Error::Invalid("need one shared or K per-user correlation matrices".into()));
        }
        if corr.mode != CorrelationMode::Uncommon && (corr.f_tot.len() != 1 || corr.c_r.len() != 1) {
            return Err(Error::Invalid("common correlation needs shared F_tot and C_R".into()));
        }
        let check = |a: &CMat, n: usize, what: &str| -> Result<CMat> {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::Invalid(format!("{what} must be {n}x{n}")));
            }
            linalg::check_psd(a, what)?;
            linalg::sqrtm_psd(a)
        };
        let r_sqrt = check(&corr.r_tot, dims.m_tot, "R_tot")?;
        let f_sqrt = corr.f_tot.iter().map(|f| check(f, dims.m_tot, "F_tot")).collect::<Result<Vec<_>>>()?;
        let c_l_sqrt = check(&corr.c_l, dims.l, "C_L")?;
        let c_r_sqrt = corr.c_r.iter().map(|cr| check(cr, dims.l, "C_R")).collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, corr, u, t, p, sigma2, r_sqrt, f_sqrt, c_l_sqrt, c_r_sqrt })
    }

    pub fn dims(&self) -> &Dimensions {
        &self.dims
    }
    pub fn correlations(&self) -> &CorrelationSet {
        &self.corr
    }
    pub fn mode(&self) -> CorrelationMode {
        self.corr.mode
    }
    pub fn u(&self) -> &[f64] {
        &self.u
    }
    pub fn t(&self) -> &[f64] {
        &self.t
    }
    pub fn p(&self) -> &[f64] {
        &self.p
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn r_sqrt(&self) -> &CMat {
        &self.r_sqrt
    }
    pub fn f_sqrt(&self, k: usize) -> &CMat {
        &self.f_sqrt[if self.f_sqrt.len() == 1 { 0 } else { k }]
    }
    pub fn c_l_sqrt(&self) -> &CMat {
        &self.c_l_sqrt
    }
    pub fn c_r_sqrt(&self, k: usize) -> &CMat {
        &self.c_r_sqrt[if self.c_r_sqrt.len() == 1 { 0 } else { k }]
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::Invalid("noise must be positive".into()));
        }
        let mut s = self.clone();
        s.sigma2 = sigma2;
        Ok(s)
    }

    pub fn with_powers(&self, p: Vec<f64>) -> Result<Self> {
        if p.len() != self.dims.k || p.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Invalid("invalid power vector".into()));
        }
        let mut s = self.clone();
        s.p = p;
        Ok(s)
    }

    /// Users share all statistics and power (common mode, equal u, t, p).
    pub fn is_homogeneous(&self) -> bool {
        let same = |v: &[f64]| v.iter().all(|&x| x == v[0]);
        self.corr.mode != CorrelationMode::Uncommon && same(&self.u) && same(&self.t) && same(&self.p)
    }

    pub fn full_selection(&self) -> PortSelection {
        PortSelection::all(self.dims.m_tot)
    }

    fn check_inputs(&self, s: &PortSelection, phi: &PhaseShifts) -> Result<()> {
        if s.m_tot() != self.dims.m_tot {
            return Err(Error::Constraint(format!("selection length {} vs M_tot {}", s.m_tot(), self.dims.m_tot)));
        }
        if phi.len() != self.dims.l {
            return Err(Error::Invalid(format!("{} phases for L={}", phi.len(), self.dims.l)));
        }
        Ok(())
    }

    /// BS-side matrix at the selection: submatrix for binary s, surrogate otherwise.
    fn bs_matrix(&self, a_tot: &CMat, a_sqrt: &CMat, s: &PortSelection, surrogate: bool) -> Result<CMat> {
        if surrogate || !s.is_binary() {
            Ok(embed_surrogate(a_sqrt, s))
        } else {
            select_submatrix(a_tot, s)
        }
    }

    fn ris_unit(&self, k: usize, phi: &PhaseShifts) -> CMat {
        let s = &self.c_l_sqrt;
        linalg::hermitian_part(&(s * rotate(self.corr.c_r(k), phi.angles()) * s))
    }

    /// Deterministic-equivalent inputs. Binary selections use exact submatrices unless
    /// `surrogate` forces the A^{1/2}diag(s)A^{1/2} embedding.
    pub fn stats_with(&self, s: &PortSelection, phi: &PhaseShifts, surrogate: bool) -> Result<Stats> {
        self.check_inputs(s, phi)?;
        let k = self.dims.k;
        let r = self.bs_matrix(&self.corr.r_tot, &self.r_sqrt, s, surrogate)?;
        let mut f = Vec::with_capacity(k);
        let mut c_k = Vec::with_capacity(k);
        let common = if self.corr.mode == CorrelationMode::Uncommon {
            for i in 0..k {
                f.push(DMat::cst(self.bs_matrix(self.corr.f_tot(i), self.f_sqrt(i), s, surrogate)?.scale(self.u[i])));
                c_k.push(DMat::cst(self.ris_unit(i, phi).scale(self.t[i])));
            }
            None
        } else {
            let fc = self.bs_matrix(self.corr.f_tot(0), self.f_sqrt(0), s, surrogate)?;
            let cc = self.ris_unit(0, phi);
            for i in 0..k {
                f.push(DMat::cst(fc.scale(self.u[i])));
                c_k.push(DMat::cst(cc.scale(self.t[i])));
            }
            Some((DMat::cst(fc), DMat::cst(cc)))
        };
        Ok(Stats {
            m: self.dims.m,
            l: self.dims.l,
            f,
            r: DMat::cst(r),
            c: c_k,
            common,
            u: self.u.clone(),
            t: self.t.clone(),
            p: self.p.clone(),
            sigma2: self.sigma2,
        })
    }

    pub fn stats(&self, s: &PortSelection, phi: &PhaseShifts) -> Result<Stats> {
        self.stats_with(s, phi, false)
    }

    /// Same as [`Scenario::stats`] with L phase tangents attached to every C_k.
    pub fn stats_phase_dual(&self, s: &PortSelection, phi: &PhaseShifts, surrogate: bool) -> Result<Stats> {
        let mut st = self.stats_with(s, phi, surrogate)?;
        let ang = phi.angles();
        match &mut st.common {
            Some((_, cc)) => {
                cc.d = phase_tangents(&self.c_l_sqrt, self.corr.c_r(0), ang);
                for (i, ck) in st.c.iter_mut().enumerate() {
                    ck.d = cc.d.iter().map(|m| m.scale(self.t[i])).collect();
                }
            }
            None => {
                for (i, ck) in st.c.iter_mut().enumerate() {
                    ck.d = phase_tangents(&self.c_l_sqrt, self.corr.c_r(i), ang)
                        .into_iter()
                        .map(|m| m.scale(self.t[i]))
                        .collect();
                }
            }
        }
        Ok(st)
    }

    /// Square-root factors for sampling at a binary selection.
    pub fn sampling_factors(&self, s: &PortSelection, phi: &PhaseShifts) -> Result<SamplingFactors> {
        self.check_inputs(s, phi)?;
        let r = select_submatrix(&self.corr.r_tot, s)?;
        let r_half = linalg::sqrtm_psd(&r)?;
        let mut f_half = Vec::with_capacity(self.dims.k);
        let mut shared: Option<CMat> = None;
        for i in 0..self.dims.k {
            let fh = if self.corr.f_tot.len() == 1 {
                if shared.is_none() {
                    shared = Some(linalg::sqrtm_psd(&select_submatrix(self.corr.f_tot(0), s)?)?);
                }
                shared.clone().expect("set above")
            } else {
                linalg::sqrtm_psd(&select_submatrix(self.corr.f_tot(i), s)?)?
            };
            f_half.push(fh.scale(self.u[i].sqrt()));
        }
        let c_plus = (0..self.dims.k)
            .map(|i| effective_ris_correlation(&self.c_l_sqrt, phi, self.c_r_sqrt(i), self.t[i]).0)
            .collect();
        Ok(SamplingFactors { m: self.dims.m, l: self.dims.l, f_half, r_half, c_plus })
    }
}

/// Per-trial RNG: one 64-bit seed, stream id = trial index.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn cn_matrix(rng: &mut impl Rng, rows: usize, cols: usize, var: f64) -> CMat {
    let s = (0.5 * var).sqrt();
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}

/// Draws (X, W, Y) and assembles h_k = √u_k F_k^{1/2} w_k + R^{1/2} X C_k^{+/2} y_k.
pub fn sample_channel(f: &SamplingFactors, rng: &mut impl Rng) -> ChannelSample {
    let (m, l, k) = (f.m, f.l, f.f_half.len());
    let x = cn_matrix(rng, m, l, 1.0 / m as f64);
    let w = cn_matrix(rng, m, k, 1.0 / m as f64);
    let y = cn_matrix(rng, l, k, 1.0 / l as f64);
    let rx = &f.r_half * &x;
    let mut h = CMat::zeros(m, k);
    let mut z = Vec::with_capacity(k);
    for i in 0..k {
        let zi = &rx * &f.c_plus[i];
        let col = &f.f_half[i] * w.column(i) + &zi * y.column(i);
        h.set_column(i, &col);
        z.push(zi);
    }
    ChannelSample { h, x, w, y, z }
}

/// Channel matrix only; same draws as [`sample_channel`].
pub fn sample_h(f: &SamplingFactors, rng: &mut impl Rng) -> CMat {
    let (m, l, k) = (f.m, f.l, f.f_half.len());
    let x = cn_matrix(rng, m, l, 1.0 / m as f64);
    let w = cn_matrix(rng, m, k, 1.0 / m as f64);
    let y = cn_matrix(rng, l, k, 1.0 / l as f64);
    let rx = &f.r_half * &x;
    let mut h = CMat::zeros(m, k);
    for i in 0..k {
        let cy = &f.c_plus[i] * y.column(i);
        let col = &f.f_half[i] * w.column(i) + &rx * cy;
        h.set_column(i, &col);
    }
    h
}
