//! Sample-based oracle: precoders per channel draw, instantaneous SINR, ESR estimates
//! and resolvent trace probes.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::{sample_channel, sample_h, trial_rng, PhaseShifts, PortSelection, SamplingFactors, Scenario};
use crate::error::{Error, Result};
use crate::linalg::{self, pairwise_sum, CMat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PrecoderKind {
    Rzf(f64),
    Zf,
    Mrt,
}

/// Smallest-to-largest singular value ratio below which ZF is rejected.
pub const ZF_RANK_TOL: f64 = 1e-10;

/// Precoder scaled so that Tr(G P G^H) = `budget`.
pub fn build_precoder(h: &CMat, kind: PrecoderKind, p: &[f64], budget: f64) -> Result<CMat> {
    let (m, k) = h.shape();
    if p.len() != k {
        return Err(Error::Invalid(format!("{} powers for {k} users", p.len())));
    }
    if h.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::Numerical("channel has non-finite entries".into()));
    }
    let gram = h.adjoint() * h;
    let g = match kind {
        PrecoderKind::Mrt => h.clone(),
        PrecoderKind::Rzf(z) => {
            if !(z > 0.0) {
                return Err(Error::Invalid(format!("RZF needs z > 0, got {z}")));
            }
            // (HH^H + zI)⁻¹H = H(H^H H + zI)⁻¹.
            let mut a = gram;
            for i in 0..k {
                a[(i, i)] += z;
            }
            h * linalg::inv_hpd(&a)?
        }
        PrecoderKind::Zf => {
            if m < k {
                return Err(Error::Feasibility(format!("ZF needs M ≥ K (M={m}, K={k})")));
            }
            let sv = h.clone().singular_values();
            let smax = sv.max();
            let smin = sv.min();
            if !(smin > ZF_RANK_TOL * smax) {
                return Err(Error::Feasibility(format!("channel is rank deficient (σ_min/σ_max = {:e})", smin / smax)));
            }
            h * linalg::inv_hpd(&gram)?
        }
    };
    let power: f64 = (0..k).map(|j| p[j] * g.column(j).norm_squared()).sum();
    if !(power > 0.0) {
        return Err(Error::Numerical("precoder has zero power".into()));
    }
    Ok(g.scale((budget / power).sqrt()))
}

/// γ_k = p_k|h_k^H g_k|² / (Σ_{i≠k} p_i|h_k^H g_i|² + σ²).
pub fn instantaneous_sinr(h: &CMat, g: &CMat, p: &[f64], sigma2: f64) -> Vec<f64> {
    let a = h.adjoint() * g;
    let k = a.nrows();
    (0..k)
        .map(|i| {
            let interf: f64 = (0..k).filter(|&j| j != i).map(|j| p[j] * a[(i, j)].norm_sqr()).sum();
            p[i] * a[(i, i)].norm_sqr() / (interf + sigma2)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsrEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: f64,
    pub trials: usize,
    pub seed: u64,
}

impl EsrEstimate {
    fn from_samples(x: &[f64], seed: u64) -> Self {
        let n = x.len() as f64;
        let mean = pairwise_sum(x) / n;
        let dev: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
        let var = pairwise_sum(&dev) / (n - 1.0);
        let stderr = (var / n).sqrt();
        Self { mean, stderr, ci95: 1.96 * stderr, trials: x.len(), seed }
    }
}

/// Runs `f(trial)` for every trial in parallel and returns results in trial order.
fn per_trial<T: Send>(trials: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..trials)
        .into_par_iter()
        .map(|i| f(i).map_err(|e| Error::Trial { trial: i, source: Box::new(e) }))
        .collect()
}

/// ESR Monte-Carlo estimate with transmit budget M.
pub fn empirical_esr(
    sc: &Scenario,
    sel: &PortSelection,
    phi: &PhaseShifts,
    kind: PrecoderKind,
    trials: usize,
    seed: u64,
) -> Result<EsrEstimate> {
    empirical_esr_with_budget(sc, sel, phi, kind, trials, seed, sc.dims().m as f64)
}

pub fn empirical_esr_with_budget(
    sc: &Scenario,
    sel: &PortSelection,
    phi: &PhaseShifts,
    kind: PrecoderKind,
    trials: usize,
    seed: u64,
    budget: f64,
) -> Result<EsrEstimate> {
    if trials < 2 {
        return Err(Error::Invalid("need at least two trials".into()));
    }
    if !(budget > 0.0) {
        return Err(Error::Invalid("power budget must be positive".into()));
    }
    let f = sc.sampling_factors(sel, phi)?;
    if f.f_half.iter().all(|m| m.norm() == 0.0) && f.c_plus.iter().all(|m| m.norm() == 0.0) {
        return Ok(EsrEstimate { mean: 0.0, stderr: 0.0, ci95: 0.0, trials, seed });
    }
    let esr = per_trial(trials, |i| {
        let mut rng = trial_rng(seed, i as u64);
        let h = sample_h(&f, &mut rng);
        let g = build_precoder(&h, kind, sc.p(), budget)?;
        let sinr = instantaneous_sinr(&h, &g, sc.p(), sc.sigma2());
        Ok(sinr.iter().map(|x| x.ln_1p()).sum::<f64>())
    })?;
    Ok(EsrEstimate::from_samples(&esr, seed))
}

/// Sample means of first- and second-order resolvent traces with Q = (zI + HH^H)⁻¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventProbe {
    pub z: f64,
    pub trials: usize,
    /// (1/M)Tr(RQ).
    pub delta: f64,
    /// (1/L)Tr(Z_k Z_k^H Q).
    pub omega: Vec<f64>,
    /// (1/M)Tr(F_k Q) + ω_k.
    pub mu: Vec<f64>,
    /// (1/M)Tr(F_k Q²) + (1/L)Tr(Z_k Z_k^H Q²).
    pub upsilon_i: Vec<f64>,
    /// L[(1/M)Tr(F_k Q A_l Q) + (1/L)Tr(Z_k Z_k^H Q A_l Q)], A_l = F_l/M + Z_l Z_l^H/L.
    pub psi: Vec<Vec<f64>>,
    /// (1/L)Tr(Z_k Z_k^H Q Z_l Z_l^H Q) + (1/M)Tr(Z_k Z_k^H Q F_l Q).
    pub lambda: Vec<Vec<f64>>,
}

struct ProbeSample {
    delta: f64,
    omega: Vec<f64>,
    mu: Vec<f64>,
    upsilon_i: Vec<f64>,
    psi: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
}

fn probe_once(f: &SamplingFactors, z: f64, seed: u64, trial: usize) -> Result<ProbeSample> {
    let mut rng = trial_rng(seed, trial as u64);
    let s = sample_channel(f, &mut rng);
    let (m, l) = (f.m as f64, f.l as f64);
    let k = f.f_half.len();
    let mut a = &s.h * s.h.adjoint();
    for i in 0..f.m {
        a[(i, i)] += Complex64::new(z, 0.0);
    }
    let q = linalg::inv_hpd(&a)?;
    let r = &f.r_half * f.r_half.adjoint();
    let fk: Vec<CMat> = f.f_half.iter().map(|x| x * x.adjoint()).collect();
    let zz: Vec<CMat> = s.z.iter().map(|x| x * x.adjoint()).collect();
    let q2 = &q * &q;
    let delta = linalg::tr_mul(&r, &q) / m;
    let omega: Vec<f64> = zz.iter().map(|x| linalg::tr_mul(x, &q) / l).collect();
    let mu: Vec<f64> = (0..k).map(|i| linalg::tr_mul(&fk[i], &q) / m + omega[i]).collect();
    let upsilon_i: Vec<f64> = (0..k).map(|i| linalg::tr_mul(&fk[i], &q2) / m + linalg::tr_mul(&zz[i], &q2) / l).collect();
    let qf: Vec<CMat> = fk.iter().map(|x| &q * x * &q).collect();
    let qz: Vec<CMat> = zz.iter().map(|x| &q * x * &q).collect();
    let mut psi = vec![vec![0.0; k]; k];
    let mut lambda = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let zqz = linalg::tr_mul(&zz[i], &qz[j]);
            let zqf = linalg::tr_mul(&zz[i], &qf[j]);
            let fqf = linalg::tr_mul(&fk[i], &qf[j]);
            let fqz = linalg::tr_mul(&fk[i], &qz[j]);
            psi[i][j] = l * (fqf / (m * m) + fqz / (m * l) + zqf / (l * m) + zqz / (l * l));
            lambda[i][j] = zqz / l + zqf / m;
        }
    }
    Ok(ProbeSample { delta, omega, mu, upsilon_i, psi, lambda })
}

pub fn resolvent_probe(
    sc: &Scenario,
    sel: &PortSelection,
    phi: &PhaseShifts,
    z: f64,
    trials: usize,
    seed: u64,
) -> Result<ResolventProbe> {
    if !(z > 0.0) {
        return Err(Error::Invalid(format!("probe needs z > 0, got {z}")));
    }
    if trials == 0 {
        return Err(Error::Invalid("need at least one trial".into()));
    }
    let f = sc.sampling_factors(sel, phi)?;
    let samples = per_trial(trials, |i| probe_once(&f, z, seed, i))?;
    let k = sc.dims().k;
    let avg = |get: &dyn Fn(&ProbeSample) -> f64| pairwise_sum(&samples.iter().map(get).collect::<Vec<_>>()) / trials as f64;
    Ok(ResolventProbe {
        z,
        trials,
        delta: avg(&|s| s.delta),
        omega: (0..k).map(|i| avg(&|s| s.omega[i])).collect(),
        mu: (0..k).map(|i| avg(&|s| s.mu[i])).collect(),
        upsilon_i: (0..k).map(|i| avg(&|s| s.upsilon_i[i])).collect(),
        psi: (0..k).map(|i| (0..k).map(|j| avg(&|s| s.psi[i][j])).collect()).collect(),
        lambda: (0..k).map(|i| (0..k).map(|j| avg(&|s| s.lambda[i][j])).collect()).collect(),
    })
}
