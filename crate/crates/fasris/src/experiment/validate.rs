//! Invariant suite run against one configured scenario.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::channel_model::{CorrelationMode, CorrelationSet, PhaseShifts, PortSelection, Scenario};
use crate::deterministic_rate::{evaluate, second_order_uncommon_perturbed, Precoder};
use crate::error::Result;
use crate::fixed_point::{solve_rzf_uncommon, SolverSettings};
use crate::monte_carlo::{empirical_esr, resolvent_probe, PrecoderKind};
use crate::optimizer::{deterministic_esr, esr_gradient_phases, esr_gradient_ports_fd, esr_gradient_ports_zf, reference_z};

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-3;
const MAX_FD_PORTS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenario_id: String,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    pub const CSV_HEADER: [&'static str; 6] = ["scenario_id", "check", "status", "measured", "tolerance", "detail"];

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        let num = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_default();
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::Skip => "skip",
            };
            wr.write_record([&self.scenario_id, &c.name, status, &num(c.measured), &num(c.tolerance), &c.detail])?;
        }
        wr.flush()?;
        Ok(())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            write!(f, "{tag} {}", c.name)?;
            if let (Some(m), Some(t)) = (c.measured, c.tolerance) {
                write!(f, " (error {m:.3e}, tolerance {t:.1e})")?;
            }
            if !c.detail.is_empty() {
                write!(f, " {}", c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidateOptions {
    pub trials: usize,
    pub seed: u64,
    /// Scales Π[row][col] in the deterministic second-order solve.
    pub pi_fault: Option<(usize, usize, f64)>,
}

impl ValidateOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self { trials: cfg.trials, seed: cfg.seed, pi_fault: None }
    }
}

fn bounded(name: &str, measured: f64, tolerance: f64, detail: String) -> Check {
    let status = if measured <= tolerance { Status::Pass } else { Status::Fail };
    Check { name: name.into(), status, measured: Some(measured), tolerance: Some(tolerance), detail }
}

fn skipped(name: &str, why: &str) -> Check {
    Check { name: name.into(), status: Status::Skip, measured: None, tolerance: None, detail: why.into() }
}

fn errored(name: &str, e: crate::error::Error) -> Check {
    Check { name: name.into(), status: Status::Fail, measured: None, tolerance: None, detail: e.to_string() }
}

fn collect(name: &str, r: Result<Check>) -> Check {
    r.unwrap_or_else(|e| errored(name, e))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if n == 0.0 {
        d
    } else {
        d / n
    }
}

/// Same scenario in per-user form: F_k = F, C_R,k = C_R for every user.
pub fn as_uncommon(sc: &Scenario) -> Result<Scenario> {
    let c = sc.correlations();
    let k = sc.dims().k;
    let corr = CorrelationSet {
        mode: CorrelationMode::Uncommon,
        r_tot: c.r_tot.clone(),
        f_tot: (0..k).map(|i| c.f_tot(i).clone()).collect(),
        c_l: c.c_l.clone(),
        c_r: (0..k).map(|i| c.c_r(i).clone()).collect(),
    };
    Scenario::new(*sc.dims(), corr, sc.u().to_vec(), sc.t().to_vec(), sc.p().to_vec(), sc.sigma2())
}

fn phase_fd(sc: &Scenario, sel: &PortSelection, phi: &PhaseShifts, z: f64, solver: &SolverSettings) -> Result<Check> {
    let (_, g) = esr_gradient_phases(sc, sel, phi, Precoder::Rzf, z, solver)?;
    let fd = (0..phi.len())
        .into_par_iter()
        .map(|l| {
            let shifted = |d: f64| {
                let mut a = phi.angles().to_vec();
                a[l] += d;
                deterministic_esr(sc, sel, &PhaseShifts::new(a), Precoder::Rzf, z, solver)
            };
            Ok((shifted(FD_H)? - shifted(-FD_H)?) / (2.0 * FD_H))
        })
        .collect::<Result<Vec<f64>>>()?;
    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(bounded("phase_gradient_fd", norm_rel(&g, &fd), FD_TOL, format!("L={} |grad|={gn:.3e}", phi.len())))
}

fn port_fd(sc: &Scenario, phi: &PhaseShifts, solver: &SolverSettings) -> Result<Check> {
    let d = sc.dims();
    let name = "port_gradient_fd";
    if d.m_tot == d.m {
        return Ok(skipped(name, "every port is selected"));
    }
    if d.m < d.k {
        return Ok(skipped(name, "ZF needs M >= K"));
    }
    if d.m_tot > MAX_FD_PORTS {
        return Ok(skipped(name, "too many ports for finite differences"));
    }
    let s0 = vec![d.m as f64 / d.m_tot as f64; d.m_tot];
    let sel = PortSelection::relaxed(s0.clone(), d.m)?;
    let g = esr_gradient_ports_zf(sc, &sel, phi, solver)?.grad;
    let fd = esr_gradient_ports_fd(sc, &s0, phi, solver, FD_H)?;
    Ok(bounded(name, norm_rel(&g, &fd), FD_TOL, format!("M_tot={}", d.m_tot)))
}

fn common_vs_uncommon(sc: &Scenario, sel: &PortSelection, phi: &PhaseShifts, z: f64, solver: &SolverSettings) -> Result<Check> {
    let name = "uncommon_specializes_to_common";
    if sc.mode() == CorrelationMode::Uncommon {
        return Ok(skipped(name, "scenario already has per-user correlations"));
    }
    let a = evaluate(sc, sel, phi, Precoder::Rzf, Some(z), solver)?.esr;
    let b = evaluate(&as_uncommon(sc)?, sel, phi, Precoder::Rzf, Some(z), solver)?.esr;
    Ok(bounded(name, rel(b, a), 1e-6, String::new()))
}

fn zf_limit(sc: &Scenario, sel: &PortSelection, phi: &PhaseShifts, solver: &SolverSettings) -> Result<Check> {
    let name = "zf_is_rzf_limit";
    let d = sc.dims();
    if d.m < d.k + 2 {
        return Ok(skipped(name, "needs M >= K + 2"));
    }
    // z relative to the channel scale so that the limit is reached for any path loss.
    let scale = sc.u().iter().zip(sc.t()).map(|(u, t)| u + t).fold(0.0, f64::max);
    let z = 1e-8 * scale;
    let zf = evaluate(sc, sel, phi, Precoder::Zf, None, solver)?.esr;
    let rzf = evaluate(sc, sel, phi, Precoder::Rzf, Some(z), solver)?.esr;
    Ok(bounded(name, rel(rzf, zf), 1e-3, format!("z={z:.3e}")))
}

fn single_hop(sc: &Scenario, solver: &SolverSettings) -> Result<Check> {
    let name = "single_hop_closed_form";
    let d = *sc.dims();
    if d.m <= d.k {
        return Ok(skipped(name, "needs M > K"));
    }
    let u = sc.u().iter().sum::<f64>() / d.k as f64;
    let corr = CorrelationSet::identity(d.m_tot, d.l);
    let flat = Scenario::new(d, corr, vec![u; d.k], vec![0.0; d.k], vec![1.0; d.k], sc.sigma2())?;
    let sel = PortSelection::uniform(d.m_tot, d.m)?;
    let de = evaluate(&flat, &sel, &PhaseShifts::zeros(d.l), Precoder::Zf, None, solver)?.esr;
    let c1 = d.c1();
    let closed = d.k as f64 * ((1.0 - c1) * u / (c1 * sc.sigma2())).ln_1p();
    Ok(bounded(name, rel(de, closed), 1e-8, String::new()))
}

fn worst(de: &[f64], mc: &[f64], label: impl Fn(usize) -> String) -> (f64, String) {
    de.iter()
        .zip(mc)
        .enumerate()
        .map(|(i, (a, b))| (rel(*a, *b), label(i)))
        .fold((0.0, String::new()), |acc, x| if x.0 > acc.0 { x } else { acc })
}

fn probes(sc: &Scenario, sel: &PortSelection, phi: &PhaseShifts, z: f64, solver: &SolverSettings, opts: &ValidateOptions) -> Result<Vec<Check>> {
    let k = sc.dims().k;
    let un = as_uncommon(sc)?;
    let st = un.stats(sel, phi)?;
    let sol = solve_rzf_uncommon(&st, z, solver)?;
    let so = second_order_uncommon_perturbed(&st, &sol, opts.pi_fault)?;
    let mc = resolvent_probe(sc, sel, phi, z, opts.trials, opts.seed)?;
    let cascaded = sc.t().iter().any(|&t| t > 0.0);
    let mut out = Vec::new();

    out.push(bounded("probe_delta", rel(sol.delta.v, mc.delta), 0.03, String::new()));
    let de_mu: Vec<f64> = sol.mu.iter().map(|x| x.v).collect();
    let (e, at) = worst(&de_mu, &mc.mu, |i| format!("worst at mu[{i}]"));
    out.push(bounded("probe_mu", e, 0.03, at));
    if cascaded {
        let de_om: Vec<f64> = sol.omega.iter().map(|x| x.v).collect();
        let (e, at) = worst(&de_om, &mc.omega, |i| format!("worst at omega[{i}]"));
        out.push(bounded("probe_omega", e, 0.03, at));
    } else {
        out.push(skipped("probe_omega", "t = 0: no cascaded channel"));
    }
    let de_up: Vec<f64> = so.upsilon_i[..k].iter().map(|x| x.v).collect();
    let (e, at) = worst(&de_up, &mc.upsilon_i, |i| format!("worst at upsilon[{i}]"));
    out.push(bounded("probe_upsilon", e, 0.05, at));
    let de_psi: Vec<f64> = so.psi.iter().flatten().map(|x| x.v).collect();
    let mc_psi: Vec<f64> = mc.psi.iter().flatten().copied().collect();
    let (e, at) = worst(&de_psi, &mc_psi, |i| format!("worst at psi[{}][{}]", i / k, i % k));
    out.push(bounded("probe_psi", e, 0.05, at));
    Ok(out)
}

fn de_vs_mc(sc: &Scenario, sel: &PortSelection, phi: &PhaseShifts, z: f64, solver: &SolverSettings, opts: &ValidateOptions) -> Result<Check> {
    let de = evaluate(sc, sel, phi, Precoder::Rzf, Some(z), solver)?.esr;
    let mc = empirical_esr(sc, sel, phi, PrecoderKind::Rzf(z), opts.trials, opts.seed)?;
    Ok(bounded("de_vs_mc", rel(de, mc.mean), 0.05, format!("DE {de:.4} MC {:.4} ± {:.2e}", mc.mean, mc.stderr)))
}

/// Runs the full invariant suite on the config's first sweep point. Failures are report content.
pub fn validate(cfg: &ExperimentConfig, opts: &ValidateOptions) -> ValidationReport {
    let mut report = ValidationReport { scenario_id: cfg.scenario.id.clone(), checks: Vec::new() };
    let sc = match cfg.first_point().and_then(|s| s.build()) {
        Ok(sc) => sc,
        Err(e) => {
            report.checks.push(errored("scenario", e));
            return report;
        }
    };
    let solver = cfg.optimizer.solver;
    let d = *sc.dims();
    let sel = match PortSelection::uniform(d.m_tot, d.m) {
        Ok(s) => s,
        Err(e) => {
            report.checks.push(errored("selection", e));
            return report;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let phi = PhaseShifts::new((0..d.l).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect());
    let z = reference_z(&sc);

    let c = &mut report.checks;
    c.push(collect("phase_gradient_fd", phase_fd(&sc, &sel, &phi, z, &solver)));
    c.push(collect("port_gradient_fd", port_fd(&sc, &phi, &solver)));
    c.push(collect("uncommon_specializes_to_common", common_vs_uncommon(&sc, &sel, &phi, z, &solver)));
    c.push(collect("zf_is_rzf_limit", zf_limit(&sc, &sel, &phi, &solver)));
    c.push(collect("single_hop_closed_form", single_hop(&sc, &solver)));
    match probes(&sc, &sel, &phi, z, &solver, opts) {
        Ok(v) => c.extend(v),
        Err(e) => c.push(errored("probes", e)),
    }
    c.push(collect("de_vs_mc", de_vs_mc(&sc, &sel, &phi, z, &solver, opts)));
    report
}
