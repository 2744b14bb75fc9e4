//! Deterministic-equivalent SINR and ergodic sum rate (nats/s/Hz).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channel_model::{CorrelationMode, PhaseShifts, PortSelection, Scenario, Stats};
use crate::dual::{dsum, solve_dual, DMat, DReal};
use crate::error::{Error, Result};
use crate::fixed_point::{
    self, solve_iid_zf, solve_rzf_common, solve_rzf_uncommon, solve_zf_common, solve_zf_uncommon, RzfCommonSolution,
    RzfUncommonSolution, SolverSettings, ZfCommonSolution, ZfUncommonSolution,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precoder {
    Rzf,
    Zf,
    Mrt,
}

impl Precoder {
    pub fn name(&self) -> &'static str {
        match self {
            Precoder::Rzf => "rzf",
            Precoder::Zf => "zf",
            Precoder::Mrt => "mrt",
        }
    }
}

impl std::str::FromStr for Precoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rzf" => Ok(Precoder::Rzf),
            "zf" => Ok(Precoder::Zf),
            "mrt" => Ok(Precoder::Mrt),
            _ => Err(Error::Invalid(format!("unknown precoder '{s}'"))),
        }
    }
}

/// Roundoff allowance for negative Ψ_{k,l}, relative to the largest |Ψ|.
const PSI_NEG_TOL: f64 = 1e-8;

/// SINRs and ESR, possibly carrying tangents.
#[derive(Clone, Debug)]
pub struct DeRates {
    pub sinr: Vec<DReal>,
    pub esr: DReal,
}

impl DeRates {
    fn from_sinr(sinr: Vec<DReal>) -> Self {
        let rates: Vec<DReal> = sinr.iter().map(DReal::ln_1p).collect();
        let esr = dsum(&rates);
        Self { sinr, esr }
    }
}

fn a_weights(mu: &[DReal]) -> Vec<DReal> {
    mu.iter().map(|m| (m + 1.0).powi(2).recip()).collect()
}

fn clip_psi(psi: &mut [Vec<DReal>]) -> Result<()> {
    let scale = psi.iter().flatten().map(|v| v.v.abs()).fold(1.0, f64::max);
    for (k, row) in psi.iter_mut().enumerate() {
        for (l, v) in row.iter_mut().enumerate() {
            if v.v < 0.0 {
                if v.v < -PSI_NEG_TOL * scale {
                    return Err(Error::Numerical(format!("Ψ[{k},{l}] = {:e} is negative beyond roundoff", v.v)));
                }
                *v = DReal::cst(0.0);
            }
        }
    }
    Ok(())
}

/// Second-order quantities of the per-user correlation model.
#[derive(Clone, Debug)]
pub struct SecondOrderTermsUncommon {
    /// χ(A,B) over A,B ∈ {F_1..F_K, R}.
    pub chi: Vec<Vec<DReal>>,
    /// χ(A, I_M) over A ∈ {F_1..F_K, R}.
    pub chi_i: Vec<DReal>,
    pub xi: Vec<Vec<DReal>>,
    pub xi_i: Vec<DReal>,
    pub delta_mat: Vec<Vec<DReal>>,
    pub pi: Vec<Vec<DReal>>,
    /// Π⁻¹χ(I_M); its first K entries are Υ_k(I_M).
    pub upsilon_i: Vec<DReal>,
    pub psi: Vec<Vec<DReal>>,
    pub c_bar: DReal,
}

pub fn second_order_uncommon(st: &Stats, sol: &RzfUncommonSolution) -> Result<SecondOrderTermsUncommon> {
    second_order_uncommon_perturbed(st, sol, None)
}

/// Same as [`second_order_uncommon`] with Π[row][col] scaled by a factor before the solve (fault injection).
pub fn second_order_uncommon_perturbed(
    st: &Stats,
    sol: &RzfUncommonSolution,
    pi_fault: Option<(usize, usize, f64)>,
) -> Result<SecondOrderTermsUncommon> {
    let k = st.k();
    let (m, l) = (st.m as f64, st.l as f64);
    let r_zero = st.r.is_zero();
    let inv_d = if r_zero { DReal::cst(0.0) } else { sol.delta.recip() };
    let inv_d2 = &inv_d * &inv_d;
    let psi_r = &sol.psi_r;

    let mats: Vec<&DMat> = st.f.iter().chain(std::iter::once(&st.r)).collect();
    let sandwiched: Vec<DMat> = mats.iter().map(|a| psi_r.mul(a).mul(psi_r)).collect();
    let psi_r2 = psi_r.mul(psi_r);
    let n = k + 1;
    let mut chi = vec![vec![DReal::cst(0.0); n]; n];
    for i in 0..n {
        for j in i..n {
            let v = mats[i].tr_mul(&sandwiched[j]).scale(1.0 / m);
            chi[j][i] = v.clone();
            chi[i][j] = v;
        }
    }
    let chi_i: Vec<DReal> = mats.iter().map(|a| a.tr_mul(&psi_r2).scale(1.0 / m)).collect();

    let q: Vec<DMat> = st.c.iter().map(|c| c.mul(&sol.psi_c)).collect();
    let mut xi = vec![vec![DReal::cst(0.0); k]; k];
    for i in 0..k {
        for j in i..k {
            let v = q[i].tr_mul(&q[j]).scale(1.0 / l);
            xi[j][i] = v.clone();
            xi[i][j] = v;
        }
    }
    let xi_i: Vec<DReal> = q.iter().map(|qk| qk.tr_mul(&sol.psi_c).scale(1.0 / l)).collect();

    let a = a_weights(&sol.mu);
    let delta_mat: Vec<Vec<DReal>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let off = (&xi[i][j] * &a[j]).scale(1.0 / l);
                    if i == j {
                        -off + 1.0
                    } else {
                        -off
                    }
                })
                .collect()
        })
        .collect();

    let ssum = dsum(
        &(0..k)
            .map(|mm| (&sol.omega[mm] - &xi_i[mm] * &inv_d) * &inv_d2 * (&sol.mu[mm] + 1.0).recip().scale(1.0 / m))
            .collect::<Vec<_>>(),
    );
    let mut pi = vec![vec![DReal::cst(0.0); n]; n];
    for row in 0..n {
        for col in 0..k {
            let coupling = (&xi_i[col] * &inv_d2 * &chi[row][k] + &chi[row][col]) * a[col].scale(1.0 / m);
            pi[row][col] = if row < k {
                let own = (&xi[row][col] * &a[col]).scale(1.0 / l);
                let v = -(own + coupling);
                if row == col {
                    v + 1.0
                } else {
                    v
                }
            } else {
                -coupling
            };
        }
        pi[row][k] = if row < k {
            -(&xi_i[row] * &inv_d2) - &ssum * &chi[row][k]
        } else {
            -(&ssum * &chi[k][k]) + 1.0
        };
    }

    if let Some((r, c, f)) = pi_fault {
        let cell = pi.get_mut(r).and_then(|row| row.get_mut(c)).ok_or_else(|| Error::Invalid(format!("Π has no entry ({r}, {c})")))?;
        *cell = cell.scale(f);
    }
    // Right-hand sides: χ(F_j) for each j, χ(R), χ(I).
    let mut rhs: Vec<Vec<DReal>> = (0..n).map(|j| (0..n).map(|i| chi[i][j].clone()).collect()).collect();
    rhs.push(chi_i.clone());
    let ups = solve_dual(&pi, &rhs, "Π")?;
    let upsilon_i = ups[n].clone();
    let ups_r = &ups[k];

    let mut drhs: Vec<Vec<DReal>> = (0..k).map(|j| (0..k).map(|i| xi[i][j].clone()).collect()).collect();
    drhs.push(xi_i.clone());
    let dsol = solve_dual(&delta_mat, &drhs, "Δ")?;
    // Δ⁻¹(I − Δ) = Δ⁻¹Ξ diag(a)/L.
    let dmix = |i: usize, j: usize| (&dsol[j][i] * &a[j]).scale(1.0 / l);

    let lm = l / m;
    let mut psi = vec![vec![DReal::cst(0.0); k]; k];
    for i in 0..k {
        let dxi_i = &dsol[k][i];
        let mixes: Vec<DReal> = (0..k).map(|j| dmix(i, j)).collect();
        for j in 0..k {
            let mut v = dsol[j][i].clone() + (dxi_i * &inv_d2 * &ups_r[j]).scale(lm) + ups[i][j].scale(lm);
            let fbar = dsum(&(0..k).map(|jj| &mixes[jj] * &ups[jj][j]).collect::<Vec<_>>());
            v = v + fbar.scale(lm);
            psi[i][j] = v;
        }
    }
    clip_psi(&mut psi)?;
    let c_bar = dsum(&(0..k).map(|mm| (&upsilon_i[mm] * &a[mm]).scale(st.p[mm] / m)).collect::<Vec<_>>());
    if !(c_bar.v > 0.0) {
        return Err(Error::Numerical(format!("C̄ = {:e} is not positive", c_bar.v)));
    }
    Ok(SecondOrderTermsUncommon { chi, chi_i, xi, xi_i, delta_mat, pi, upsilon_i, psi, c_bar })
}

fn rzf_sinr(st: &Stats, mu: &[DReal], psi: &[Vec<DReal>], c_bar: &DReal) -> Vec<DReal> {
    let k = st.k();
    let l = st.l as f64;
    let a = a_weights(mu);
    (0..k)
        .map(|i| {
            let interf = dsum(
                &(0..k)
                    .filter(|&j| j != i)
                    .map(|j| (&psi[i][j] * &a[j]).scale(st.p[j] / l))
                    .collect::<Vec<_>>(),
            );
            let noise = (&mu[i] + 1.0).powi(2) * c_bar.scale(st.sigma2);
            (&mu[i] * &mu[i]).scale(st.p[i]) / (interf + noise)
        })
        .collect()
}

pub fn sinr_rzf_uncommon(sol: &RzfUncommonSolution, st: &Stats) -> Result<DeRates> {
    let so = second_order_uncommon(st, sol)?;
    Ok(DeRates::from_sinr(rzf_sinr(st, &sol.mu, &so.psi, &so.c_bar)))
}

pub(crate) fn zf_sinr(st: &Stats, mu: &[DReal]) -> Result<Vec<DReal>> {
    if st.m < st.k() {
        return Err(Error::Feasibility(format!("ZF needs M ≥ K (M={}, K={})", st.m, st.k())));
    }
    let m = st.m as f64;
    let denom = dsum(&mu.iter().zip(&st.p).map(|(mu, &p)| mu.recip().scale(p / m)).collect::<Vec<_>>()).scale(st.sigma2);
    let inv = denom.recip();
    Ok(st.p.iter().map(|&p| inv.scale(p)).collect())
}

pub fn sinr_zf_uncommon(sol: &ZfUncommonSolution, st: &Stats) -> Result<DeRates> {
    Ok(DeRates::from_sinr(zf_sinr(st, &sol.mu)?))
}

/// Second-order quantities of the shared-correlation model.
#[derive(Clone, Debug)]
pub struct SecondOrderTermsCommon {
    pub xi: DReal,
    pub xi_i: DReal,
    pub delta: DReal,
    pub pi: Vec<Vec<DReal>>,
    pub psi: Vec<Vec<DReal>>,
    pub c_bar: DReal,
}

/// (1/L)Σ a_k b_k ψ_k² for diagonal A, B, Ψ_T.
fn eta(a: &[f64], b: &[f64], psi_t: &[DReal], l: f64) -> DReal {
    dsum(
        &a.iter()
            .zip(b)
            .zip(psi_t)
            .map(|((&x, &y), p)| (p * p).scale(x * y / l))
            .collect::<Vec<_>>(),
    )
}

pub fn second_order_common(st: &Stats, sol: &RzfCommonSolution) -> Result<SecondOrderTermsCommon> {
    let (f, c) = st
        .common
        .as_ref()
        .ok_or_else(|| Error::Invalid("shared-correlation terms need shared F and C".into()))?;
    let k = st.k();
    let (m, l) = (st.m as f64, st.l as f64);
    let (u, t, p) = (&st.u, &st.t, &st.p);
    let r_zero = st.r.is_zero();
    let inv_d = if r_zero { DReal::cst(0.0) } else { sol.delta.recip() };
    let inv_d2 = &inv_d * &inv_d;
    let (om, ob) = (&sol.omega, &sol.omega_bar);

    let psi_r = &sol.psi_r;
    let pr_r = psi_r.mul(&st.r).mul(psi_r);
    let pr_f = psi_r.mul(f).mul(psi_r);
    let pr2 = psi_r.mul(psi_r);
    let chi_rr = st.r.tr_mul(&pr_r).scale(1.0 / m);
    let chi_rf = st.r.tr_mul(&pr_f).scale(1.0 / m);
    let chi_ff = f.tr_mul(&pr_f).scale(1.0 / m);
    let chi_ri = st.r.tr_mul(&pr2).scale(1.0 / m);
    let chi_fi = f.tr_mul(&pr2).scale(1.0 / m);

    let cp = c.mul(&sol.psi_c);
    let xi = cp.tr_mul(&cp).scale(1.0 / l);
    let xi_i = cp.tr_mul(&sol.psi_c).scale(1.0 / l);

    let pt = &sol.psi_t;
    let e_tt = eta(t, t, pt, l);
    let e_tu = eta(t, u, pt, l);
    let e_uu = eta(u, u, pt, l);
    let e_pt = eta(p, t, pt, l);
    let e_pu = eta(p, u, pt, l);
    let dl = -(&xi * &e_tt) + 1.0;
    if dl.v.abs() < 1e-14 {
        return Err(Error::Numerical("Δ_com is singular".into()));
    }

    let lm = l / m;
    let ups = |chi_r: &DReal, chi_f: &DReal| (om * &inv_d * chi_r * &e_tu).scale(lm) + (chi_f * &e_uu).scale(lm);
    let lam = |chi_r: &DReal, chi_f: &DReal| {
        (chi_f * &e_tu).scale(lm) - (&inv_d * chi_r * (ob - om * &e_tt)).scale(lm)
    };
    let rr = (om * ob * &inv_d2).scale(lm);
    let pi = vec![
        vec![-(&rr * &chi_rr) + 1.0, -ups(&chi_rr, &chi_rf), -lam(&chi_rr, &chi_rf)],
        vec![-(&rr * &chi_rf), -ups(&chi_rf, &chi_ff) + 1.0, -lam(&chi_rf, &chi_ff)],
        vec![-(&xi_i * &inv_d2), -(&xi * &e_tu), -(&xi * &e_tt) + 1.0],
    ];
    let zero = DReal::cst(0.0);
    let rhs = vec![
        vec![chi_rr.clone(), chi_rf.clone(), zero.clone()],
        vec![chi_rf.clone(), chi_ff.clone(), zero.clone()],
        vec![chi_ri, chi_fi, zero],
    ];
    let s = solve_dual(&pi, &rhs, "Π_com")?;
    let (s_r, s_f, s_i) = (&s[0], &s[1], &s[2]);

    let inv_dl = dl.recip();
    let cascade = (&xi + (&xi_i * &inv_d2 * &s_r[2]).scale(lm)) * &inv_dl;
    let cross = (&xi * &e_tu * &inv_dl).scale(lm);
    let mut psi = vec![vec![DReal::cst(0.0); k]; k];
    for i in 0..k {
        for j in 0..k {
            let tt = t[i] * t[j];
            psi[i][j] = cascade.scale(tt)
                + (cross.scale(tt) + DReal::cst(lm * (t[j] * u[i] + t[i] * u[j]))) * &s_f[2]
                + s_f[1].scale(u[i] * u[j] * lm);
        }
    }
    clip_psi(&mut psi)?;
    let c_bar = ((&e_pt * &s_i[2]) + (&e_pu * &s_i[1])).scale(lm);
    if !(c_bar.v > 0.0) {
        return Err(Error::Numerical(format!("C̄_com = {:e} is not positive", c_bar.v)));
    }
    Ok(SecondOrderTermsCommon { xi, xi_i, delta: dl, pi, psi, c_bar })
}

pub fn sinr_rzf_common(sol: &RzfCommonSolution, st: &Stats) -> Result<DeRates> {
    let so = second_order_common(st, sol)?;
    let mu = sol.mu(&st.u, &st.t);
    Ok(DeRates::from_sinr(rzf_sinr(st, &mu, &so.psi, &so.c_bar)))
}

pub fn sinr_zf_common(sol: &ZfCommonSolution, st: &Stats) -> Result<DeRates> {
    Ok(DeRates::from_sinr(zf_sinr(st, &sol.mu(&st.u, &st.t))?))
}

/// Default regularization Kσ²/M.
pub fn default_z(st: &Stats) -> f64 {
    st.k() as f64 * st.sigma2 / st.m as f64
}

/// Deterministic SINR/ESR for RZF or ZF; shared statistics select the common-correlation formulas.
pub fn de_rates(st: &Stats, precoder: Precoder, z: f64, s: &SolverSettings) -> Result<DeRates> {
    match (precoder, st.common.is_some()) {
        (Precoder::Rzf, false) => sinr_rzf_uncommon(&solve_rzf_uncommon(st, z, s)?, st),
        (Precoder::Rzf, true) => sinr_rzf_common(&solve_rzf_common(st, z, s)?, st),
        (Precoder::Zf, false) => sinr_zf_uncommon(&solve_zf_uncommon(st, s)?, st),
        (Precoder::Zf, true) => sinr_zf_common(&solve_zf_common(st, s)?, st),
        (Precoder::Mrt, _) => Err(Error::Invalid(
            "no deterministic MRT equivalent for correlated channels; use the i.i.d. closed form or Monte Carlo".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputsDigest {
    pub z: Option<f64>,
    pub sigma2: f64,
    pub selection: Option<String>,
    pub phases: Option<String>,
}

/// FNV-1a over the bit patterns of a float slice.
pub fn digest_f64(x: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub precoder: Precoder,
    pub mode: CorrelationMode,
    pub sinr: Vec<f64>,
    pub rates: Vec<f64>,
    pub esr: f64,
    pub digest: InputsDigest,
    /// Set for MRT when the rate has reached its high-SNR ceiling.
    pub saturated: Option<bool>,
}

impl RateReport {
    pub fn new(precoder: Precoder, mode: CorrelationMode, sinr: Vec<f64>, digest: InputsDigest) -> Result<Self> {
        if sinr.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Numerical(format!("invalid SINR vector {sinr:?}")));
        }
        let rates: Vec<f64> = sinr.iter().map(|g| g.ln_1p()).collect();
        let esr = rates.iter().sum();
        Ok(Self { precoder, mode, sinr, rates, esr, digest, saturated: None })
    }

    pub fn from_de(precoder: Precoder, mode: CorrelationMode, de: &DeRates, digest: InputsDigest) -> Result<Self> {
        Self::new(precoder, mode, de.sinr.iter().map(|g| g.v).collect(), digest)
    }

    pub fn regime(&self) -> String {
        format!("{}/{}", self.precoder.name(), mode_name(self.mode))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (k, (g, r)) in self.sinr.iter().zip(&self.rates).enumerate() {
            w.write_record([self.regime(), k.to_string(), format!("{g:.12e}"), format!("{r:.12e}"), format!("{:.12e}", self.esr)])?;
        }
        Ok(())
    }

    pub const CSV_HEADER: [&'static str; 5] = ["regime", "user", "sinr", "rate", "esr"];

    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "regime: {}", self.regime());
        let _ = writeln!(s, "esr: {:.10}", self.esr);
        for (k, g) in self.sinr.iter().enumerate() {
            let _ = writeln!(s, "sinr[{k}]: {g:.10e}");
        }
        if let Some(z) = self.digest.z {
            let _ = writeln!(s, "z: {z:e}");
        }
        let _ = writeln!(s, "sigma2: {:e}", self.digest.sigma2);
        if let Some(h) = &self.digest.selection {
            let _ = writeln!(s, "selection: {h}");
        }
        if let Some(h) = &self.digest.phases {
            let _ = writeln!(s, "phases: {h}");
        }
        s
    }
}

pub fn mode_name(m: CorrelationMode) -> &'static str {
    match m {
        CorrelationMode::Uncommon => "uncommon",
        CorrelationMode::Common => "common",
        CorrelationMode::Iid => "iid",
    }
}

/// Evaluates the deterministic ESR of a scenario at (s, Φ). `z = None` uses Kσ²/M.
pub fn evaluate(
    sc: &Scenario,
    sel: &PortSelection,
    phi: &PhaseShifts,
    precoder: Precoder,
    z: Option<f64>,
    s: &SolverSettings,
) -> Result<RateReport> {
    let digest = |z| InputsDigest {
        z,
        sigma2: sc.sigma2(),
        selection: Some(digest_f64(sel.values())),
        phases: Some(digest_f64(phi.angles())),
    };
    if precoder == Precoder::Mrt {
        if sc.mode() != CorrelationMode::Iid || !sc.is_homogeneous() {
            return Err(Error::Invalid("deterministic MRT needs an i.i.d. scenario with equal gains".into()));
        }
        let d = sc.dims();
        let mut rep = esr_iid_mrt(sc.u()[0], sc.t()[0], d.m, d.k, d.l, sc.sigma2())?;
        rep.digest = digest(None);
        return Ok(rep);
    }
    let st = sc.stats(sel, phi)?;
    let zz = match precoder {
        Precoder::Rzf => Some(z.unwrap_or_else(|| default_z(&st))),
        _ => None,
    };
    let de = de_rates(&st, precoder, zz.unwrap_or(0.0), s)?;
    RateReport::from_de(precoder, sc.mode(), &de, digest(zz))
}

/// ZF ESR for identity correlations, K ln(1 + (1−c1)β/(c1σ²)).
pub fn esr_iid_zf(u: f64, t: f64, c1: f64, c2: f64, sigma2: f64, k: usize) -> Result<RateReport> {
    if !(sigma2 > 0.0) || k == 0 {
        return Err(Error::Invalid("need σ² > 0 and K ≥ 1".into()));
    }
    let sol = solve_iid_zf(u, t, c1, c2)?;
    let g = sol.mu / (c1 * sigma2);
    let digest = InputsDigest { z: None, sigma2, selection: None, phases: None };
    RateReport::new(Precoder::Zf, CorrelationMode::Iid, vec![g; k], digest)
}

fn mrt_sinr(u: f64, t: f64, m: f64, k: f64, l: f64, sigma2: f64) -> f64 {
    let interf = (k - 1.0) * t * (u + t) / m + (k - 1.0) * t * (t * l / (m * m) + u * l / m) / l;
    (t + u).powi(2) / (interf + k * sigma2 * (t + u) / m)
}

/// MRT ESR for identity correlations, closed form as printed; flags saturation.
pub fn esr_iid_mrt(u: f64, t: f64, m: usize, k: usize, l: usize, sigma2: f64) -> Result<RateReport> {
    if !(sigma2 > 0.0) || m == 0 || k == 0 || l == 0 || !(u + t > 0.0) {
        return Err(Error::Invalid("MRT closed form needs positive inputs".into()));
    }
    let (mf, kf, lf) = (m as f64, k as f64, l as f64);
    let g = mrt_sinr(u, t, mf, kf, lf, sigma2);
    let digest = InputsDigest { z: None, sigma2, selection: None, phases: None };
    let mut rep = RateReport::new(Precoder::Mrt, CorrelationMode::Iid, vec![g; k], digest)?;
    let ceiling = mrt_sinr(u, t, mf, kf, lf, 0.0);
    rep.saturated = Some(k > 1 && ceiling.is_finite() && kf * g.ln_1p() >= 0.99 * kf * ceiling.ln_1p());
    Ok(rep)
}

/// Fewest ports reaching `r_target_bits` (bits/s/Hz) with ZF over i.i.d. channels.
pub fn min_ports(r_target_bits: f64, k: usize, u: f64, t: f64, c2: f64, sigma2: f64) -> Result<usize> {
    if !(r_target_bits >= 0.0) || k == 0 || !(sigma2 > 0.0) {
        return Err(Error::Invalid("need R ≥ 0, K ≥ 1, σ² > 0".into()));
    }
    let beta = fixed_point::iid_beta(u, t, c2);
    if !(beta > 0.0) {
        return Err(Error::Feasibility("β = 0: no rate is reachable".into()));
    }
    let kf = k as f64;
    let x = kf * (sigma2 * ((r_target_bits / kf).exp2() - 1.0) / beta + 1.0);
    Ok(x.ceil() as usize)
}
