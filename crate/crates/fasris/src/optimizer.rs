//! Two-timescale design on statistical CSI.
//!
//! Ports are chosen by Frank-Wolfe on the relaxed ZF rate, phases by normalized
//! gradient ascent with backtracking, and the RZF regularizer by a 1-D search.
//! Phase gradients come from forward tangents through the fixed point; the port
//! gradient uses the adjoint of the ZF fixed point so its cost does not grow with M_tot.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::{PhaseShifts, PortSelection, Scenario, Stats};
use crate::deterministic_rate::{de_rates, evaluate, zf_sinr, Precoder, RateReport};
use crate::dual::{dsum, DReal};
use crate::error::{Context, Error, Result};
use crate::fixed_point::{map_common, map_jacobian, map_uncommon, solve_zf_common, solve_zf_uncommon, Kind, SolverSettings};
use crate::linalg::{self, CMat, RMat, RealLu};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub solver: SolverSettings,
    pub fw_eps: f64,
    pub fw_max_iter: usize,
    pub alpha0: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub max_halvings: usize,
    pub phase_eps: f64,
    pub phase_max_iter: usize,
    pub ao_eps: f64,
    pub ao_max_iter: usize,
    pub t_iter: usize,
    pub z_grid: usize,
    pub z_span: f64,
    pub z_rel_width: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            fw_eps: 1e-5,
            fw_max_iter: 500,
            alpha0: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            max_halvings: 40,
            phase_eps: 1e-10,
            phase_max_iter: 500,
            ao_eps: 1e-5,
            ao_max_iter: 20,
            t_iter: 3,
            z_grid: 41,
            z_span: 1e4,
            z_rel_width: 1e-4,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.alpha0 > 0.0) {
            return Err(Error::Invalid("initial step must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::Invalid("backtracking factor and Armijo constant must lie in (0, 1)".into()));
        }
        if self.t_iter == 0 || self.fw_max_iter == 0 || self.ao_max_iter == 0 {
            return Err(Error::Invalid("iteration caps must be at least 1".into()));
        }
        if self.z_grid < 3 || !(self.z_span > 1.0) || !(self.z_rel_width > 0.0) {
            return Err(Error::Invalid("z search needs at least 3 grid points, span > 1 and a positive width".into()));
        }
        Ok(())
    }
}

/// One row of an optimization trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: String,
    pub outer: usize,
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub residual: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
    pub selection: Vec<usize>,
    pub z: Option<f64>,
    pub phi: Vec<f64>,
    pub esr: f64,
}

impl OptimizationTrace {
    pub const CSV_HEADER: [&'static str; 7] = ["stage", "outer", "iteration", "objective", "step", "residual", "wall_ms"];

    /// `timing = false` leaves wall_ms empty so traces are reproducible byte for byte.
    pub fn write_csv<W: std::io::Write>(&self, w: W, timing: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            wr.write_record([
                r.stage.clone(),
                r.outer.to_string(),
                r.iteration.to_string(),
                format!("{:.12e}", r.objective),
                format!("{:.6e}", r.step),
                format!("{:.6e}", r.residual),
                if timing { format!("{:.3}", r.wall_ms) } else { String::new() },
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct Recorder {
    start: Instant,
    records: Vec<TraceRecord>,
}

impl Recorder {
    fn new() -> Self {
        Self { start: Instant::now(), records: Vec::new() }
    }

    fn push(&mut self, stage: &str, outer: usize, iteration: usize, objective: f64, step: f64, residual: f64) {
        self.records.push(TraceRecord {
            stage: stage.into(),
            outer,
            iteration,
            objective,
            step,
            residual,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
    }
}

fn rel_diff(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-300)
}

fn check_precoder(p: Precoder) -> Result<()> {
    if p == Precoder::Mrt {
        return Err(Error::Invalid("optimization supports RZF and ZF only".into()));
    }
    Ok(())
}

/// [G_l]_{l,q} = j e^{j(φ_l−φ_q)}, [G_l]_{p,l} = −j e^{j(φ_p−φ_l)}, zero elsewhere and on the diagonal.
pub fn gradient_g_l(phi: &[f64], l: usize) -> CMat {
    let n = phi.len();
    let j = Complex64::i();
    CMat::from_fn(n, n, |p, q| {
        if p == q {
            Complex64::new(0.0, 0.0)
        } else if p == l {
            j * Complex64::from_polar(1.0, phi[l] - phi[q])
        } else if q == l {
            -j * Complex64::from_polar(1.0, phi[p] - phi[l])
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Deterministic ESR at a binary selection. `z` is ignored for ZF.
pub fn deterministic_esr(
    sc: &Scenario,
    s: &PortSelection,
    phi: &PhaseShifts,
    precoder: Precoder,
    z: f64,
    solver: &SolverSettings,
) -> Result<f64> {
    check_precoder(precoder)?;
    Ok(de_rates(&sc.stats(s, phi)?, precoder, z, solver)?.esr.v)
}

/// ESR and its gradient with respect to all L phases.
pub fn esr_gradient_phases(
    sc: &Scenario,
    s: &PortSelection,
    phi: &PhaseShifts,
    precoder: Precoder,
    z: f64,
    solver: &SolverSettings,
) -> Result<(f64, Vec<f64>)> {
    check_precoder(precoder)?;
    let st = sc.stats_phase_dual(s, phi, false)?;
    let esr = de_rates(&st, precoder, z, solver)?.esr;
    Ok((esr.v, (0..phi.len()).map(|i| esr.tangent(i)).collect()))
}

#[derive(Clone, Debug)]
pub struct PortGradient {
    pub esr: f64,
    pub grad: Vec<f64>,
}

/// Re(a_iᴴ G a_i) for every column a_i of the Hermitian factor `s`.
fn column_forms(s: &CMat, g: &CMat) -> Vec<f64> {
    let gs = g * s;
    (0..s.ncols())
        .map(|i| s.column(i).iter().zip(gs.column(i).iter()).map(|(a, b)| (a.conj() * b).re).sum())
        .collect()
}

fn zf_esr_tangents(st: &Stats, mu: &[DReal]) -> Result<DReal> {
    let sinr = zf_sinr(st, mu)?;
    Ok(dsum(&sinr.iter().map(DReal::ln_1p).collect::<Vec<_>>()))
}

fn vars(x: &[f64]) -> Vec<DReal> {
    x.iter().enumerate().map(|(i, &v)| DReal::var(v, i, x.len())).collect()
}

fn adjoint(x: &[f64], g: &[f64], map: impl FnMut(&[DReal]) -> Result<Vec<DReal>>) -> Result<Vec<f64>> {
    let n = x.len();
    let j = map_jacobian(x, map)?;
    let lu = RealLu::new(&(RMat::identity(n, n) - j), "ZF port adjoint")?;
    Ok(lu.solve_transpose(g))
}

/// Gradient of the relaxed ZF ESR with respect to every port weight s_i.
///
/// With x* = T(x*, s) and ESR = g(x*), dESR/ds_i = λᵀ ∂T/∂s_i where (I − ∂T/∂x)ᵀλ = ∇g.
/// Only Ψ_R depends on s at fixed x, so each ∂T/∂s_i is a quadratic form in the
/// i-th column of the correlation square root.
pub fn esr_gradient_ports_zf(sc: &Scenario, s: &PortSelection, phi: &PhaseShifts, solver: &SolverSettings) -> Result<PortGradient> {
    let st = sc.stats_with(s, phi, true)?;
    let k = st.k();
    let m = st.m as f64;
    let consts = |x: &[f64]| x.iter().map(|&v| DReal::cst(v)).collect::<Vec<_>>();
    let r_zero = st.r.is_zero();
    match &st.common {
        None => {
            let sol = solve_zf_uncommon(&st, solver)?;
            let x: Vec<f64> = std::iter::once(sol.delta.v)
                .chain(sol.omega.iter().map(|v| v.v))
                .chain(sol.mu.iter().map(|v| v.v))
                .collect();
            let esr = zf_esr_tangents(&st, &vars(&x)[k + 1..])?;
            let lam = adjoint(&x, &esr.d, |xd| Ok(map_uncommon(&st, Kind::Zf, xd, false)?.x))?;
            let psi = map_uncommon(&st, Kind::Zf, &consts(&x), false)?.psi_r.v;
            let mut wmat = st.r.v.scale(lam[0] / m);
            for i in 0..k {
                wmat += st.f[i].v.scale(lam[k + 1 + i] / m);
            }
            let q = &psi * wmat * &psi;
            let w: Vec<f64> = x[k + 1..].iter().map(|mu| 1.0 / mu).collect();
            let shared = sc.correlations().f_tot.len() == 1;
            let mut grad = vec![0.0; sc.dims().m_tot];
            let mut gsum = linalg::zeros(psi.nrows());
            for i in 0..k {
                let gf = (psi.scale(lam[k + 1 + i]) - q.scale(w[i])).scale(sc.u()[i] / m);
                if shared {
                    gsum += gf;
                } else {
                    for (a, b) in grad.iter_mut().zip(column_forms(sc.f_sqrt(i), &gf)) {
                        *a += b;
                    }
                }
            }
            if shared {
                for (a, b) in grad.iter_mut().zip(column_forms(sc.f_sqrt(0), &gsum)) {
                    *a += b;
                }
            }
            if !r_zero {
                let rcoef: f64 = (0..k).map(|i| x[1 + i] * w[i]).sum::<f64>() / m;
                let gr = psi.scale(lam[0] / m) - q.scale(rcoef / x[0]);
                for (a, b) in grad.iter_mut().zip(column_forms(sc.r_sqrt(), &gr)) {
                    *a += b;
                }
            }
            Ok(PortGradient { esr: esr.v, grad })
        }
        Some((f, _)) => {
            let sol = solve_zf_common(&st, solver)?;
            let x = vec![sol.delta.v, sol.kappa.v, sol.omega.v];
            let xv = vars(&x);
            let mu: Vec<DReal> = st.u.iter().zip(&st.t).map(|(&u, &t)| xv[2].scale(t) + xv[1].scale(u)).collect();
            let esr = zf_esr_tangents(&st, &mu)?;
            let lam = adjoint(&x, &esr.d, |xd| Ok(map_common(&st, Kind::Zf, xd, false)?.0.x))?;
            let (ev, aux) = map_common(&st, Kind::Zf, &consts(&x), false)?;
            let psi = ev.psi_r.v;
            let l = st.l as f64;
            let q = &psi * (st.r.v.scale(lam[0] / m) + f.v.scale(lam[1] / m)) * &psi;
            let gf = psi.scale(lam[1] / m) - q.scale(l / m * aux.kappa_bar.v);
            let mut grad = column_forms(sc.f_sqrt(0), &gf);
            if !r_zero {
                let gr = psi.scale(lam[0] / m) - q.scale(l / m * x[2] * aux.omega_bar.v / x[0]);
                for (a, b) in grad.iter_mut().zip(column_forms(sc.r_sqrt(), &gr)) {
                    *a += b;
                }
            }
            Ok(PortGradient { esr: esr.v, grad })
        }
    }
}

/// Central-difference port gradient of the relaxed ZF ESR. Entries are perturbed in
/// place, so `s` should stay at least `h` inside [0, 1].
pub fn esr_gradient_ports_fd(sc: &Scenario, s: &[f64], phi: &PhaseShifts, solver: &SolverSettings, h: f64) -> Result<Vec<f64>> {
    let m_tot = sc.dims().m_tot;
    let eval = |v: Vec<f64>| -> Result<f64> {
        let sel = PortSelection::relaxed(v, m_tot)?;
        Ok(de_rates(&sc.stats_with(&sel, phi, true)?, Precoder::Zf, 0.0, solver)?.esr.v)
    };
    (0..s.len())
        .into_par_iter()
        .map(|i| {
            let mut p = s.to_vec();
            let mut q = s.to_vec();
            p[i] += h;
            q[i] -= h;
            Ok((eval(p)? - eval(q)?) / (2.0 * h))
        })
        .collect()
}

/// Indices of the `m` largest entries, ties to the lowest index, in ascending order.
fn top_m(v: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

/// Vertex with ones at the M largest gradient entries.
pub fn fw_linear_oracle(gradient: &[f64], m: usize) -> Result<PortSelection> {
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite port gradient".into()));
    }
    PortSelection::from_indices(gradient.len(), &top_m(gradient, m), m)
}

#[derive(Clone, Debug)]
pub struct FwResult {
    pub selection: PortSelection,
    pub relaxed: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub records: Vec<TraceRecord>,
}

/// Frank-Wolfe on the relaxed ZF ESR. The top-M rounding of the final iterate competes
/// with every vertex the linear oracle visited, scored by the exact ZF ESR.
pub fn fw_port_selection(sc: &Scenario, phi: &PhaseShifts, settings: &OptimizerSettings) -> Result<FwResult> {
    settings.validate()?;
    let (m, m_tot) = (sc.dims().m, sc.dims().m_tot);
    let mut s = vec![m as f64 / m_tot as f64; m_tot];
    let mut rec = Recorder::new();
    let mut prev: Option<f64> = None;
    let mut objective = f64::NAN;
    let mut iterations = 0;
    let mut visited: Vec<PortSelection> = Vec::new();
    for t in 0..settings.fw_max_iter {
        let sel = PortSelection::relaxed(s.clone(), m)?;
        let pg = esr_gradient_ports_zf(sc, &sel, phi, &settings.solver).context(format!("Frank-Wolfe iteration {t}"))?;
        objective = pg.esr;
        iterations = t + 1;
        let res = prev.map_or(f64::INFINITY, |p| rel_diff(pg.esr, p));
        let gamma = 2.0 / (t as f64 + 2.0);
        rec.push("ports", 0, t, pg.esr, gamma, res);
        if res < settings.fw_eps {
            break;
        }
        prev = Some(pg.esr);
        let vertex = fw_linear_oracle(&pg.grad, m)?;
        if !visited.contains(&vertex) {
            visited.push(vertex.clone());
        }
        for (si, vi) in s.iter_mut().zip(vertex.values()) {
            *si = (*si + gamma * (vi - *si)).clamp(0.0, 1.0);
        }
    }
    // Rounded iterate first so that it wins ties against visited vertices.
    let rounded = PortSelection::from_indices(m_tot, &top_m(&s, m), m)?;
    let scores = std::iter::once(&rounded)
        .chain(&visited)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|c| deterministic_esr(sc, c, phi, Precoder::Zf, 0.0, &settings.solver))
        .collect::<Result<Vec<f64>>>()?;
    let ib = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
    let selection = if ib == 0 { rounded } else { visited.swap_remove(ib - 1) };
    Ok(FwResult { selection, relaxed: s, objective, iterations, records: rec.records })
}

#[derive(Clone, Debug)]
pub struct PhaseAscent {
    pub phi: PhaseShifts,
    pub esr: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub stalled: bool,
    pub records: Vec<TraceRecord>,
}

/// Normalized gradient ascent over the phases with backtracking.
///
/// A step α along g/‖g‖ is accepted when ESR rises by at least αβ‖g‖.
pub fn gradient_ascent_phases(
    sc: &Scenario,
    s: &PortSelection,
    precoder: Precoder,
    z: f64,
    phi0: &PhaseShifts,
    settings: &OptimizerSettings,
) -> Result<PhaseAscent> {
    settings.validate()?;
    let solver = &settings.solver;
    let mut rec = Recorder::new();
    let mut phi = phi0.clone();
    let (mut esr, mut grad) = esr_gradient_phases(sc, s, &phi, precoder, z, solver)?;
    let mut norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut stalled = false;
    let mut iterations = 0;
    rec.push("phases", 0, 0, esr, 0.0, norm);
    while iterations < settings.phase_max_iter && norm > 1e-14 * esr.abs().max(1.0) {
        iterations += 1;
        let mut alpha = settings.alpha0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let cand = PhaseShifts::new(phi.angles().iter().zip(&grad).map(|(p, g)| p + alpha * g / norm).collect());
            let val = deterministic_esr(sc, s, &cand, precoder, z, solver)?;
            if val >= esr + alpha * settings.armijo * norm {
                accepted = Some((cand, val));
                break;
            }
            alpha *= settings.backtrack;
        }
        let Some((cand, val)) = accepted else {
            stalled = true;
            break;
        };
        let change = rel_diff(val, esr);
        phi = cand;
        (esr, grad) = esr_gradient_phases(sc, s, &phi, precoder, z, solver)?;
        norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        rec.push("phases", 0, iterations, esr, alpha, norm);
        if change < settings.phase_eps {
            break;
        }
    }
    Ok(PhaseAscent { phi, esr, grad_norm: norm, iterations, stalled, records: rec.records })
}

#[derive(Clone, Debug)]
pub struct ZSearch {
    pub z: f64,
    pub esr: f64,
    pub shortcut: bool,
    pub grid: Vec<(f64, f64)>,
}

/// Kσ²/M.
pub fn reference_z(sc: &Scenario) -> f64 {
    sc.dims().k as f64 * sc.sigma2() / sc.dims().m as f64
}

/// RZF regularizer maximizing the deterministic ESR; homogeneous scenarios return Kσ²/M directly.
pub fn search_regularization(sc: &Scenario, s: &PortSelection, phi: &PhaseShifts, settings: &OptimizerSettings) -> Result<ZSearch> {
    if sc.is_homogeneous() {
        let z = reference_z(sc);
        let esr = deterministic_esr(sc, s, phi, Precoder::Rzf, z, &settings.solver)?;
        return Ok(ZSearch { z, esr, shortcut: true, grid: vec![(z, esr)] });
    }
    search_regularization_grid(sc, s, phi, settings)
}

/// Log-grid scan over [Kσ²/M / span, Kσ²/M · span] refined by golden section.
pub fn search_regularization_grid(sc: &Scenario, s: &PortSelection, phi: &PhaseShifts, settings: &OptimizerSettings) -> Result<ZSearch> {
    settings.validate()?;
    let st = sc.stats(s, phi)?;
    let eval = |z: f64| -> Result<f64> {
        Ok(de_rates(&st, Precoder::Rzf, z, &settings.solver).context(format!("z = {z:e}"))?.esr.v)
    };
    let n = settings.z_grid;
    let lo = (reference_z(sc) / settings.z_span).ln();
    let hi = (reference_z(sc) * settings.z_span).ln();
    let step = (hi - lo) / (n - 1) as f64;
    let logs: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let vals = logs.par_iter().map(|&t| eval(t.exp())).collect::<Result<Vec<f64>>>()?;
    let grid: Vec<(f64, f64)> = logs.iter().map(|t| t.exp()).zip(vals.iter().copied()).collect();
    let ib = (0..n).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
    let (mut best_t, mut best_v) = (logs[ib], vals[ib]);

    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = logs[ib.saturating_sub(1)];
    let mut b = logs[(ib + 1).min(n - 1)];
    let width = settings.z_rel_width.ln_1p();
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (eval(c.exp())?, eval(d.exp())?);
    while b - a > width {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = eval(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = eval(d.exp())?;
        }
    }
    for (t, v) in [(c, fc), (d, fd)] {
        if v > best_v {
            best_t = t;
            best_v = v;
        }
    }
    Ok(ZSearch { z: best_t.exp(), esr: best_v, shortcut: false, grid })
}

#[derive(Clone, Debug)]
pub struct AoResult {
    pub z: Option<f64>,
    pub phi: PhaseShifts,
    pub esr: f64,
    pub outer: usize,
    pub records: Vec<TraceRecord>,
}

/// Alternates the z search and phase ascent at a fixed selection. ZF skips the z step.
pub fn alternating_optimization(
    sc: &Scenario,
    s: &PortSelection,
    precoder: Precoder,
    phi0: &PhaseShifts,
    z0: Option<f64>,
    settings: &OptimizerSettings,
) -> Result<AoResult> {
    check_precoder(precoder)?;
    settings.validate()?;
    let mut rec = Recorder::new();
    let mut z = match precoder {
        Precoder::Rzf => Some(z0.unwrap_or_else(|| reference_z(sc))),
        _ => None,
    };
    let mut phi = phi0.clone();
    let mut esr = deterministic_esr(sc, s, &phi, precoder, z.unwrap_or(0.0), &settings.solver)?;
    rec.push("ao", 0, 0, esr, 0.0, f64::INFINITY);
    let mut outer = 0;
    while outer < settings.ao_max_iter {
        outer += 1;
        let prev = esr;
        if let Some(zc) = z {
            let zs = search_regularization(sc, s, &phi, settings).context(format!("AO iteration {outer}: z search"))?;
            if zs.esr > esr {
                z = Some(zs.z);
                esr = zs.esr;
            } else {
                z = Some(zc);
            }
        }
        let pa = gradient_ascent_phases(sc, s, precoder, z.unwrap_or(0.0), &phi, settings)
            .context(format!("AO iteration {outer}: phases"))?;
        if pa.esr >= esr {
            phi = pa.phi;
            esr = pa.esr;
        }
        let res = rel_diff(esr, prev);
        rec.push("ao", outer, pa.iterations, esr, z.unwrap_or(0.0), res);
        if res < settings.ao_eps {
            break;
        }
    }
    Ok(AoResult { z, phi, esr, outer, records: rec.records })
}

#[derive(Clone, Debug)]
pub struct JointResult {
    pub selection: PortSelection,
    pub z: Option<f64>,
    pub phi: PhaseShifts,
    pub report: RateReport,
    pub trace: OptimizationTrace,
}

/// Outer loop over port selection and AO; returns the best iterate seen.
pub fn joint_optimize(sc: &Scenario, precoder: Precoder, settings: &OptimizerSettings) -> Result<JointResult> {
    check_precoder(precoder)?;
    settings.validate()?;
    let mut phi = PhaseShifts::zeros(sc.dims().l);
    let mut z = (precoder == Precoder::Rzf).then(|| reference_z(sc));
    let mut records = Vec::new();
    let mut best: Option<(f64, PortSelection, Option<f64>, PhaseShifts)> = None;
    for it in 1..=settings.t_iter {
        let fw = fw_port_selection(sc, &phi, settings).context(format!("joint iteration {it}"))?;
        let ao = alternating_optimization(sc, &fw.selection, precoder, &phi, z, settings)
            .context(format!("joint iteration {it}"))?;
        for mut r in fw.records.into_iter().chain(ao.records) {
            r.outer = it;
            records.push(r);
        }
        if best.as_ref().is_none_or(|b| ao.esr > b.0) {
            best = Some((ao.esr, fw.selection.clone(), ao.z, ao.phi.clone()));
        }
        phi = ao.phi;
        z = ao.z;
    }
    let (esr, selection, z, phi) = best.expect("at least one outer iteration");
    let report = evaluate(sc, &selection, &phi, precoder, z, &settings.solver)?;
    let trace = OptimizationTrace { records, selection: selection.indices(), z, phi: phi.angles().to_vec(), esr };
    Ok(JointResult { selection, z, phi, report, trace })
}
