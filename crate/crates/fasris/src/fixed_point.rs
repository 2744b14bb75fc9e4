//! Fixed-point solvers for the deterministic equivalents.
//!
//! Every solver iterates in plain values and, when the input [`Stats`] carry
//! tangents, differentiates the converged point implicitly:
//! dx = (I − ∂T/∂x)⁻¹ ∂T/∂θ for the Jacobi map T.

use serde::{Deserialize, Serialize};

use crate::channel_model::Stats;
use crate::dual::{DMat, DReal};
use crate::error::{Error, Result};
use crate::linalg::{self, RMat, RealLu};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub init: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 2000, damping: 1.0, init: 1.0 }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("solver tolerance must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Invalid("damping must lie in (0, 1]".into()));
        }
        if !(self.init > 0.0) || self.max_iter == 0 {
            return Err(Error::Invalid("initial value and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// RZF (regularization z) or ZF (the z→0 scaled limit).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Rzf(f64),
    Zf,
}

impl Kind {
    fn base(&self) -> f64 {
        match self {
            Kind::Rzf(z) => *z,
            Kind::Zf => 1.0,
        }
    }

    /// 1/(1+μ) for RZF, 1/μ for ZF.
    fn weight(&self, mu: &DReal) -> Result<DReal> {
        match self {
            Kind::Rzf(_) => Ok((mu + 1.0).recip()),
            Kind::Zf => {
                if !(mu.v > 0.0) {
                    return Err(Error::Feasibility(format!("ZF fixed point reached μ = {:e}", mu.v)));
                }
                Ok(mu.recip())
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Links {
    r_zero: bool,
}

fn links(st: &Stats) -> Links {
    Links { r_zero: st.r.is_zero() }
}

fn zero_mat(n: usize) -> DMat {
    DMat::cst(linalg::zeros(n))
}

#[derive(Clone, Debug)]
pub struct RzfUncommonSolution {
    pub z: f64,
    pub delta: DReal,
    pub mu: Vec<DReal>,
    pub omega: Vec<DReal>,
    pub psi_r: DMat,
    pub psi_c: DMat,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ZfUncommonSolution {
    pub delta: DReal,
    pub mu: Vec<DReal>,
    pub omega: Vec<DReal>,
    pub k_r: DMat,
    pub k_c: DMat,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct RzfCommonSolution {
    pub z: f64,
    pub delta: DReal,
    pub kappa: DReal,
    pub omega: DReal,
    pub kappa_bar: DReal,
    pub omega_bar: DReal,
    pub psi_r: DMat,
    pub psi_c: DMat,
    /// Diagonal of Ψ_T.
    pub psi_t: Vec<DReal>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ZfCommonSolution {
    pub delta: DReal,
    pub kappa: DReal,
    pub omega: DReal,
    pub kappa_bar: DReal,
    pub omega_bar: DReal,
    pub psi_r: DMat,
    pub psi_c: DMat,
    pub psi_t: Vec<DReal>,
    pub iterations: usize,
    pub residual: f64,
}

impl RzfCommonSolution {
    /// μ_k = t_k ω + u_k κ.
    pub fn mu(&self, u: &[f64], t: &[f64]) -> Vec<DReal> {
        u.iter().zip(t).map(|(&uk, &tk)| self.omega.scale(tk) + self.kappa.scale(uk)).collect()
    }
}

impl ZfCommonSolution {
    pub fn mu(&self, u: &[f64], t: &[f64]) -> Vec<DReal> {
        u.iter().zip(t).map(|(&uk, &tk)| self.omega.scale(tk) + self.kappa.scale(uk)).collect()
    }
}

/// Output of one map evaluation: new unknowns and the two resolvent-like matrices.
pub struct MapEval {
    pub x: Vec<DReal>,
    pub psi_r: DMat,
    pub psi_c: DMat,
}

/// Uncommon map on x = [δ, ω_1..ω_K, μ_1..μ_K]. With `gauss_seidel` the fresh δ feeds Ψ_C.
pub fn map_uncommon(st: &Stats, kind: Kind, x: &[DReal], gauss_seidel: bool) -> Result<MapEval> {
    let k = st.k();
    let (m, l) = (st.m as f64, st.l as f64);
    let lk = links(st);
    let delta = &x[0];
    let omega = &x[1..=k];
    let mu = &x[k + 1..];
    let w = mu.iter().map(|v| kind.weight(v)).collect::<Result<Vec<_>>>()?;

    let mut a = zero_mat(st.r.dim());
    a.add_identity(&DReal::cst(kind.base()));
    let mut rcoef = DReal::cst(0.0);
    for i in 0..k {
        let wi = w[i].scale(1.0 / m);
        a.axpy(&st.f[i], &wi);
        if !lk.r_zero {
            rcoef = rcoef + &omega[i] * &wi;
        }
    }
    if !lk.r_zero {
        a.axpy(&st.r, &(rcoef / delta));
    }
    let psi_r = a.inv_hpd()?;

    let new_delta = if lk.r_zero { DReal::cst(0.0) } else { st.r.tr_mul(&psi_r).scale(1.0 / m) };
    let d_for_c = if gauss_seidel { &new_delta } else { delta };
    let psi_c = if lk.r_zero {
        zero_mat(st.l)
    } else {
        let mut b = zero_mat(st.l);
        b.add_identity(&d_for_c.recip());
        for i in 0..k {
            b.axpy(&st.c[i], &w[i].scale(1.0 / l));
        }
        b.inv_hpd()?
    };
    let mut out = Vec::with_capacity(2 * k + 1);
    out.push(new_delta);
    let new_omega: Vec<DReal> = st.c.iter().map(|ci| ci.tr_mul(&psi_c).scale(1.0 / l)).collect();
    let new_mu: Vec<DReal> = (0..k).map(|i| st.f[i].tr_mul(&psi_r).scale(1.0 / m) + &new_omega[i]).collect();
    out.extend(new_omega);
    out.extend(new_mu);
    Ok(MapEval { x: out, psi_r, psi_c })
}

/// Common-correlation map on x = [δ, κ, ω]. Also returns κ̄, ω̄ and diag(Ψ_T) through `aux`.
pub fn map_common(st: &Stats, kind: Kind, x: &[DReal], gauss_seidel: bool) -> Result<(MapEval, CommonAux)> {
    let (f, c) = st
        .common
        .as_ref()
        .ok_or_else(|| Error::Invalid("common-correlation solver needs shared F and C".into()))?;
    let (m, l) = (st.m as f64, st.l as f64);
    let lk = links(st);
    let (delta, kappa, omega) = (&x[0], &x[1], &x[2]);
    let psi_t = st
        .u
        .iter()
        .zip(&st.t)
        .map(|(&u, &t)| kind.weight(&(omega.scale(t) + kappa.scale(u))))
        .collect::<Result<Vec<_>>>()?;
    let kappa_bar = psi_t.iter().zip(&st.u).fold(DReal::cst(0.0), |acc, (p, &u)| acc + p.scale(u / l));
    let omega_bar = psi_t.iter().zip(&st.t).fold(DReal::cst(0.0), |acc, (p, &t)| acc + p.scale(t / l));

    let mut a = zero_mat(st.r.dim());
    a.add_identity(&DReal::cst(kind.base()));
    a.axpy(f, &kappa_bar.scale(l / m));
    if !lk.r_zero {
        a.axpy(&st.r, &(omega * &omega_bar / delta).scale(l / m));
    }
    let psi_r = a.inv_hpd()?;
    let new_delta = if lk.r_zero { DReal::cst(0.0) } else { st.r.tr_mul(&psi_r).scale(1.0 / m) };
    let new_kappa = f.tr_mul(&psi_r).scale(1.0 / m);
    let d_for_c = if gauss_seidel { &new_delta } else { delta };
    let psi_c = if lk.r_zero {
        zero_mat(st.l)
    } else {
        let mut b = zero_mat(st.l);
        b.add_identity(&d_for_c.recip());
        b.axpy(c, &omega_bar);
        b.inv_hpd()?
    };
    let new_omega = c.tr_mul(&psi_c).scale(1.0 / l);
    Ok((
        MapEval { x: vec![new_delta, new_kappa, new_omega], psi_r, psi_c },
        CommonAux { kappa_bar, omega_bar, psi_t },
    ))
}

pub struct CommonAux {
    pub kappa_bar: DReal,
    pub omega_bar: DReal,
    pub psi_t: Vec<DReal>,
}

fn rel_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (b - a).abs() / b.abs().max(1e-12))
        .fold(0.0, f64::max)
}

/// Damped Picard iteration; damping halves whenever the residual grows.
fn picard(x0: Vec<f64>, s: &SolverSettings, mut sweep: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<(Vec<f64>, usize)> {
    s.validate()?;
    let mut x = x0;
    let mut theta = s.damping;
    let mut prev = f64::INFINITY;
    let mut res = f64::INFINITY;
    for it in 1..=s.max_iter {
        let tx = sweep(&x)?;
        if tx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite iterate at sweep {it}")));
        }
        res = rel_change(&x, &tx);
        if res <= s.tol {
            return Ok((tx, it));
        }
        if res > prev {
            theta = (0.5 * theta).max(1.0 / 1024.0);
        }
        prev = res;
        x = x.iter().zip(&tx).map(|(a, b)| a + theta * (b - a)).collect();
    }
    Err(Error::Convergence { iterations: s.max_iter, residual: res })
}

fn values(x: &[DReal]) -> Vec<f64> {
    x.iter().map(|v| v.v).collect()
}

fn consts(x: &[f64]) -> Vec<DReal> {
    x.iter().map(|&v| DReal::cst(v)).collect()
}

/// ∂T/∂x at `x` for a map evaluated on value-only statistics.
pub fn map_jacobian(x: &[f64], mut map: impl FnMut(&[DReal]) -> Result<Vec<DReal>>) -> Result<RMat> {
    let n = x.len();
    let xv: Vec<DReal> = x.iter().enumerate().map(|(i, &v)| DReal::var(v, i, n)).collect();
    let tx = map(&xv)?;
    Ok(RMat::from_fn(n, n, |i, j| tx[i].tangent(j)))
}

/// Attaches parameter tangents to the fixed point `x` by implicit differentiation.
fn implicit_tangents(
    x: &[f64],
    ntan: usize,
    block: &str,
    mut map_values: impl FnMut(&[DReal]) -> Result<Vec<DReal>>,
    mut map_params: impl FnMut(&[DReal]) -> Result<Vec<DReal>>,
) -> Result<Vec<DReal>> {
    if ntan == 0 {
        return Ok(consts(x));
    }
    let n = x.len();
    let j = map_jacobian(x, &mut map_values)?;
    let a = RMat::identity(n, n) - j;
    let lu = RealLu::new(&a, block)?;
    let dt = map_params(&consts(x))?;
    let mut dx = vec![vec![0.0; ntan]; n];
    for p in 0..ntan {
        let rhs: Vec<f64> = dt.iter().map(|v| v.tangent(p)).collect();
        let sol = lu.solve(&rhs);
        for i in 0..n {
            dx[i][p] = sol[i];
        }
    }
    Ok(x.iter().zip(dx).map(|(&v, d)| DReal { v, d }).collect())
}

fn check_zf(st: &Stats) -> Result<()> {
    if st.m < st.k() {
        return Err(Error::Feasibility(format!("ZF needs M ≥ K (M={}, K={})", st.m, st.k())));
    }
    Ok(())
}

fn check_z(z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Invalid(format!("regularization z must be positive, got {z}")));
    }
    Ok(())
}

struct UncommonRaw {
    x: Vec<DReal>,
    eval: MapEval,
    iterations: usize,
    residual: f64,
}

fn solve_uncommon(st: &Stats, kind: Kind, s: &SolverSettings) -> Result<UncommonRaw> {
    let k = st.k();
    let plain = st.value_only();
    let lk = links(st);
    let mut x0 = vec![s.init; 2 * k + 1];
    if lk.r_zero {
        x0[0] = 0.0;
    }
    let (xs, iterations) = picard(x0, s, |x| Ok(values(&map_uncommon(&plain, kind, &consts(x), true)?.x)))?;
    let ntan = st.ntan();
    let x = implicit_tangents(
        &xs,
        ntan,
        "fixed-point Jacobian",
        |x| Ok(map_uncommon(&plain, kind, x, false)?.x),
        |x| Ok(map_uncommon(st, kind, x, false)?.x),
    )?;
    let eval = map_uncommon(st, kind, &x, false)?;
    let residual = rel_change(&xs, &values(&eval.x));
    Ok(UncommonRaw { x, eval, iterations, residual })
}

pub fn solve_rzf_uncommon(st: &Stats, z: f64, s: &SolverSettings) -> Result<RzfUncommonSolution> {
    check_z(z)?;
    let k = st.k();
    let raw = solve_uncommon(st, Kind::Rzf(z), s)?;
    let x = raw.x;
    Ok(RzfUncommonSolution {
        z,
        delta: x[0].clone(),
        omega: x[1..=k].to_vec(),
        mu: x[k + 1..].to_vec(),
        psi_r: raw.eval.psi_r,
        psi_c: raw.eval.psi_c,
        iterations: raw.iterations,
        residual: raw.residual,
    })
}

pub fn solve_zf_uncommon(st: &Stats, s: &SolverSettings) -> Result<ZfUncommonSolution> {
    check_zf(st)?;
    let k = st.k();
    let raw = solve_uncommon(st, Kind::Zf, s)?;
    let x = raw.x;
    Ok(ZfUncommonSolution {
        delta: x[0].clone(),
        omega: x[1..=k].to_vec(),
        mu: x[k + 1..].to_vec(),
        k_r: raw.eval.psi_r,
        k_c: raw.eval.psi_c,
        iterations: raw.iterations,
        residual: raw.residual,
    })
}

struct CommonRaw {
    x: Vec<DReal>,
    eval: MapEval,
    aux: CommonAux,
    iterations: usize,
    residual: f64,
}

fn solve_common(st: &Stats, kind: Kind, s: &SolverSettings) -> Result<CommonRaw> {
    let plain = st.value_only();
    let lk = links(st);
    let mut x0 = vec![s.init; 3];
    if lk.r_zero {
        x0[0] = 0.0;
    }
    let (xs, iterations) = picard(x0, s, |x| Ok(values(&map_common(&plain, kind, &consts(x), true)?.0.x)))?;
    let x = implicit_tangents(
        &xs,
        st.ntan(),
        "fixed-point Jacobian",
        |x| Ok(map_common(&plain, kind, x, false)?.0.x),
        |x| Ok(map_common(st, kind, x, false)?.0.x),
    )?;
    let (eval, aux) = map_common(st, kind, &x, false)?;
    let residual = rel_change(&xs, &values(&eval.x));
    Ok(CommonRaw { x, eval, aux, iterations, residual })
}

pub fn solve_rzf_common(st: &Stats, z: f64, s: &SolverSettings) -> Result<RzfCommonSolution> {
    check_z(z)?;
    let raw = solve_common(st, Kind::Rzf(z), s)?;
    let [delta, kappa, omega]: [DReal; 3] = raw.x.try_into().expect("three unknowns");
    Ok(RzfCommonSolution {
        z,
        delta,
        kappa,
        omega,
        kappa_bar: raw.aux.kappa_bar,
        omega_bar: raw.aux.omega_bar,
        psi_r: raw.eval.psi_r,
        psi_c: raw.eval.psi_c,
        psi_t: raw.aux.psi_t,
        iterations: raw.iterations,
        residual: raw.residual,
    })
}

pub fn solve_zf_common(st: &Stats, s: &SolverSettings) -> Result<ZfCommonSolution> {
    check_zf(st)?;
    let raw = solve_common(st, Kind::Zf, s)?;
    let [delta, kappa, omega]: [DReal; 3] = raw.x.try_into().expect("three unknowns");
    Ok(ZfCommonSolution {
        delta,
        kappa,
        omega,
        kappa_bar: raw.aux.kappa_bar,
        omega_bar: raw.aux.omega_bar,
        psi_r: raw.eval.psi_r,
        psi_c: raw.eval.psi_c,
        psi_t: raw.aux.psi_t,
        iterations: raw.iterations,
        residual: raw.residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IidSolution {
    pub u: f64,
    pub t: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

pub fn iid_alpha(u: f64, t: f64, c2: f64) -> f64 {
    c2 * c2 * t * t - 2.0 * c2 * t * t + t * t + 2.0 * t * u * c2 + 2.0 * t * u + u * u
}

pub fn iid_beta(u: f64, t: f64, c2: f64) -> f64 {
    0.5 * (u + t - t * c2 + iid_alpha(u, t, c2).sqrt())
}

/// Closed-form ZF equivalent for identity correlations. c2 = 0 gives β = u + t.
pub fn solve_iid_zf(u: f64, t: f64, c1: f64, c2: f64) -> Result<IidSolution> {
    if !(c1 > 0.0) || c1 >= 1.0 {
        return Err(Error::Feasibility(format!("need 0 < K/M < 1, got {c1}")));
    }
    if !(c2 >= 0.0) || !(u >= 0.0) || !(t >= 0.0) {
        return Err(Error::Invalid("u, t and c2 must be non-negative".into()));
    }
    let alpha = iid_alpha(u, t, c2);
    let beta = iid_beta(u, t, c2);
    Ok(IidSolution { u, t, c1, c2, alpha, beta, mu: (1.0 - c1) * beta })
}
