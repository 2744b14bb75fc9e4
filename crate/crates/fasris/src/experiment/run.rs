use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use super::plot::{Plot, Series};
use super::{Axis, ExperimentConfig, Method};
use crate::channel_model::{PhaseShifts, PortSelection, Scenario};
use crate::deterministic_rate::{evaluate, Precoder};
use crate::error::{Context, Result};
use crate::monte_carlo::{empirical_esr, PrecoderKind};
use crate::optimizer::{alternating_optimization, joint_optimize, reference_z, search_regularization_grid};

pub const CSV_HEADER: [&str; 8] = ["scenario_id", "axis_name", "axis_value", "precoder", "method", "esr", "stderr", "runtime_ms"];

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub scenario_id: String,
    pub axis_name: String,
    pub axis_value: f64,
    pub precoder: Precoder,
    pub method: Method,
    pub esr: f64,
    pub stderr: Option<f64>,
    pub runtime_ms: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Record wall-clock time per row. Off by default so output is byte-identical across runs.
    pub timing: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    /// Named vertical reference lines (z sweeps only).
    pub markers: Vec<(String, f64)>,
}

struct Point {
    id: String,
    value: f64,
    spec: super::ScenarioSpec,
}

fn points(cfg: &ExperimentConfig) -> Result<Vec<Point>> {
    let series: Vec<(String, super::ScenarioSpec)> = match &cfg.series {
        None => vec![(cfg.scenario.id.clone(), cfg.scenario.clone())],
        Some(se) => se
            .values
            .iter()
            .map(|&v| Ok((format!("{}-{}{}", cfg.scenario.id, se.axis.name(), fmt_value(v)), cfg.scenario.with_axis(se.axis, v)?)))
            .collect::<Result<_>>()?,
    };
    let mut out = Vec::new();
    for (id, spec) in series {
        for &v in &cfg.sweep.values {
            out.push(Point { id: id.clone(), value: v, spec: spec.with_axis(cfg.sweep.axis, v)? });
        }
    }
    Ok(out)
}

fn kind(p: Precoder, z: f64) -> PrecoderKind {
    match p {
        Precoder::Rzf => PrecoderKind::Rzf(z),
        Precoder::Zf => PrecoderKind::Zf,
        Precoder::Mrt => PrecoderKind::Mrt,
    }
}

/// `None` when the (precoder, method) pair has no meaning for this scenario.
fn run_one(cfg: &ExperimentConfig, sc: &Scenario, z: f64, p: Precoder, method: Method) -> Result<Option<(f64, Option<f64>)>> {
    let d = sc.dims();
    let sel = PortSelection::uniform(d.m_tot, d.m)?;
    let phi = PhaseShifts::zeros(d.l);
    let opt = &cfg.optimizer;
    let deterministic_mrt = sc.mode() == crate::channel_model::CorrelationMode::Iid && sc.is_homogeneous();
    Ok(match (method, p) {
        (Method::Mc, _) => {
            let e = empirical_esr(sc, &sel, &phi, kind(p, z), cfg.trials, cfg.seed)?;
            Some((e.mean, Some(e.stderr)))
        }
        (Method::De, Precoder::Mrt) if !deterministic_mrt => None,
        (Method::De, _) => Some((evaluate(sc, &sel, &phi, p, Some(z), &opt.solver)?.esr, None)),
        (_, Precoder::Mrt) => None,
        (Method::Uniform, _) => Some((alternating_optimization(sc, &sel, p, &phi, Some(z), opt)?.esr, None)),
        (Method::Joint, _) => Some((joint_optimize(sc, p, opt)?.report.esr, None)),
    })
}

fn run_point(cfg: &ExperimentConfig, pt: &Point, opts: RunOptions) -> Result<Vec<Row>> {
    let axis = cfg.sweep.axis;
    let here = format!("{} {}={}", pt.id, axis.name(), pt.value);
    let sc = pt.spec.build().context(here.clone())?;
    let z = if axis == Axis::Z { pt.value } else { reference_z(&sc) };
    let mut rows = Vec::new();
    for &p in &cfg.precoders {
        for &method in &cfg.methods {
            let t0 = Instant::now();
            let r = run_one(cfg, &sc, z, p, method).context(format!("{here} {} {}", p.name(), method.name()))?;
            if let Some((esr, stderr)) = r {
                rows.push(Row {
                    scenario_id: pt.id.clone(),
                    axis_name: axis.name().into(),
                    axis_value: pt.value,
                    precoder: p,
                    method,
                    esr,
                    stderr,
                    runtime_ms: opts.timing.then(|| t0.elapsed().as_secs_f64() * 1e3),
                });
            }
        }
    }
    Ok(rows)
}

/// Runs every (series, sweep) point in parallel; rows come back in config order.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let pts = points(cfg)?;
    let rows: Vec<Row> = pts.par_iter().map(|pt| run_point(cfg, pt, opts)).collect::<Result<Vec<_>>>()?.concat();
    let mut markers = Vec::new();
    if cfg.sweep.axis == Axis::Z {
        let sc = pts[0].spec.build()?;
        let d = sc.dims();
        let sel = PortSelection::uniform(d.m_tot, d.m)?;
        let zs = search_regularization_grid(&sc, &sel, &PhaseShifts::zeros(d.l), &cfg.optimizer)?;
        markers.push(("Kσ²/M".to_string(), reference_z(&sc)));
        markers.push(("search".to_string(), zs.z));
    }
    Ok(RunOutput { rows, markers })
}

/// Plain decimal for ordinary magnitudes, scientific otherwise.
pub(crate) fn fmt_value(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub fn write_csv<W: Write>(rows: &[Row], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in rows {
        wr.write_record([
            r.scenario_id.clone(),
            r.axis_name.clone(),
            fmt_value(r.axis_value),
            r.precoder.name().to_string(),
            r.method.name().to_string(),
            format!("{:.10e}", r.esr),
            r.stderr.map(|s| format!("{s:.4e}")).unwrap_or_default(),
            r.runtime_ms.map(|t| format!("{t:.3}")).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// One curve per (scenario, precoder, method); Monte-Carlo curves are drawn as markers.
pub fn write_svg<W: Write>(cfg: &ExperimentConfig, out: &RunOutput, mut w: W) -> Result<()> {
    let mut series: Vec<Series> = Vec::new();
    for r in &out.rows {
        let label = format!("{} {} {}", r.scenario_id, r.precoder.name(), r.method.name());
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((r.axis_value, r.esr)),
            None => series.push(Series { label, points: vec![(r.axis_value, r.esr)], markers_only: r.method == Method::Mc }),
        }
    }
    let plot = Plot {
        title: cfg.scenario.id.clone(),
        x_label: cfg.sweep.axis.name().to_string(),
        y_label: "ESR [nats/s/Hz]".to_string(),
        log_x: cfg.sweep.axis == Axis::Z,
        series,
        vlines: out.markers.clone(),
    };
    w.write_all(plot.render().as_bytes())?;
    Ok(())
}
