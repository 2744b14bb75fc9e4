use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fasris::channel_model::{PhaseShifts, PortSelection, Scenario};
use fasris::deterministic_rate::{evaluate, Precoder, RateReport};
use fasris::experiment::validate::{validate, ValidateOptions};
use fasris::experiment::{self, recipe, Axis, ExperimentConfig, RunOptions};
use fasris::monte_carlo::{empirical_esr, EsrEstimate, PrecoderKind};
use fasris::optimizer::{
    fw_port_selection, gradient_ascent_phases, joint_optimize, reference_z, search_regularization, OptimizationTrace,
};

#[derive(Parser)]
#[command(name = "fasris", version, about = "Rate analysis and optimization for fluid-antenna + RIS downlinks")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FASRIS_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Deterministic per-user SINR and ESR at the first sweep point.
    Evaluate {
        #[arg(long, value_delimiter = ',')]
        precoder: Vec<Precoder>,
    },
    /// Monte-Carlo ESR over the SNR sweep (or the first point for other axes).
    Montecarlo {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        precoder: Vec<Precoder>,
    },
    /// Optimizes ports, phases and/or the regularizer at the first sweep point.
    Optimize {
        #[arg(long, value_enum, default_value_t = Mode::Joint)]
        mode: Mode,
        #[arg(long, default_value = "rzf")]
        precoder: Precoder,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value = "solution.json")]
        out: PathBuf,
        #[arg(long)]
        timing: bool,
    },
    /// Runs the configured sweep and writes CSV + SVG.
    Sweep {
        #[arg(long)]
        timing: bool,
    },
    /// Runs the invariant suite on the first sweep point.
    Validate {
        #[arg(long)]
        trials: Option<usize>,
        /// Exit nonzero when any check fails.
        #[arg(long)]
        strict: bool,
        /// Fault injection: scale the second-order matrix entry ROW,COL by FACTOR.
        #[arg(long, value_name = "ROW,COL,FACTOR")]
        fault_pi: Option<String>,
    },
    /// Runs a built-in figure preset.
    Figure {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(experiment::FIGURES))]
        name: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        timing: bool,
        /// Write the preset config instead of running it.
        #[arg(long)]
        dump: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Joint,
    Phases,
    Ports,
    Zsearch,
}

#[derive(Serialize)]
struct Solution {
    scenario_id: String,
    mode: &'static str,
    precoder: Precoder,
    selection: Vec<usize>,
    phi: Vec<f64>,
    z: Option<f64>,
    esr: f64,
    monte_carlo: EsrEstimate,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_deref().context("this command needs --config <file>")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("writing {}", path.display()))?))
}

fn kind(p: Precoder, z: Option<f64>, sc: &Scenario) -> PrecoderKind {
    match p {
        Precoder::Rzf => PrecoderKind::Rzf(z.unwrap_or_else(|| reference_z(sc))),
        Precoder::Zf => PrecoderKind::Zf,
        Precoder::Mrt => PrecoderKind::Mrt,
    }
}

fn defaults(sel: &[Precoder], cfg: &ExperimentConfig) -> Vec<Precoder> {
    if sel.is_empty() {
        cfg.precoders.clone()
    } else {
        sel.to_vec()
    }
}

fn run_sweep(cfg: &ExperimentConfig, dir: &Path, timing: bool) -> Result<()> {
    let out = experiment::run_experiment(cfg, RunOptions { timing })?;
    experiment::write_csv(&out.rows, create(dir, &cfg.csv_name())?)?;
    experiment::write_svg(cfg, &out, create(dir, &cfg.svg_name())?)?;
    println!("{} rows -> {}", out.rows.len(), dir.join(cfg.csv_name()).display());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, precoders: &[Precoder]) -> Result<()> {
    let cfg = load(cli)?;
    let sc = cfg.first_point()?.build()?;
    let d = sc.dims();
    let sel = PortSelection::uniform(d.m_tot, d.m)?;
    let phi = PhaseShifts::zeros(d.l);
    let mut w = csv::Writer::from_writer(create(&cli.out_dir, &format!("{}-evaluate.csv", cfg.scenario.id))?);
    w.write_record(RateReport::CSV_HEADER)?;
    for p in defaults(precoders, &cfg) {
        let rep = evaluate(&sc, &sel, &phi, p, None, &cfg.optimizer.solver).with_context(|| format!("{} evaluation", p.name()))?;
        print!("{}", rep.to_record());
        rep.write_csv(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_montecarlo(cli: &Cli, trials: Option<usize>, precoders: &[Precoder]) -> Result<()> {
    let cfg = load(cli)?;
    let trials = trials.unwrap_or(cfg.trials);
    let base = cfg.first_point()?;
    let snrs = if cfg.sweep.axis == Axis::SnrDb { cfg.sweep.values.clone() } else { vec![base.snr_db] };
    let mut w = csv::Writer::from_writer(create(&cli.out_dir, &format!("{}-montecarlo.csv", cfg.scenario.id))?);
    w.write_record(["scenario_id", "snr_db", "precoder", "trials", "esr_mean", "esr_stderr"])?;
    for snr in snrs {
        let sc = base.with_axis(Axis::SnrDb, snr)?.build()?;
        let d = sc.dims();
        let sel = PortSelection::uniform(d.m_tot, d.m)?;
        for p in defaults(precoders, &cfg) {
            let e = empirical_esr(&sc, &sel, &PhaseShifts::zeros(d.l), kind(p, None, &sc), trials, cfg.seed)
                .with_context(|| format!("{} at {snr} dB", p.name()))?;
            w.write_record([
                cfg.scenario.id.clone(),
                snr.to_string(),
                p.name().into(),
                trials.to_string(),
                format!("{:.10e}", e.mean),
                format!("{:.4e}", e.stderr),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_optimize(cli: &Cli, mode: Mode, precoder: Precoder, trace: Option<&Path>, out: &Path, timing: bool) -> Result<()> {
    let cfg = load(cli)?;
    if precoder == Precoder::Mrt {
        bail!("optimization supports rzf and zf only");
    }
    let sc = cfg.first_point()?.build()?;
    let d = *sc.dims();
    let opt = &cfg.optimizer;
    let uniform = PortSelection::uniform(d.m_tot, d.m)?;
    let phi0 = PhaseShifts::zeros(d.l);
    let z_ref = (precoder == Precoder::Rzf).then(|| reference_z(&sc));
    let (name, sel, phi, z, esr, records) = match mode {
        Mode::Joint => {
            let r = joint_optimize(&sc, precoder, opt)?;
            ("joint", r.selection, r.phi, r.z, r.report.esr, r.trace.records)
        }
        Mode::Phases => {
            let r = gradient_ascent_phases(&sc, &uniform, precoder, z_ref.unwrap_or(0.0), &phi0, opt)?;
            ("phases", uniform, r.phi, z_ref, r.esr, r.records)
        }
        Mode::Ports => {
            let r = fw_port_selection(&sc, &phi0, opt)?;
            let esr = evaluate(&sc, &r.selection, &phi0, precoder, z_ref, &opt.solver)?.esr;
            ("ports", r.selection, phi0, z_ref, esr, r.records)
        }
        Mode::Zsearch => {
            if precoder != Precoder::Rzf {
                bail!("zsearch needs --precoder rzf");
            }
            let r = search_regularization(&sc, &uniform, &phi0, opt)?;
            ("zsearch", uniform, phi0, Some(r.z), r.esr, Vec::new())
        }
    };
    let mc = empirical_esr(&sc, &sel, &phi, kind(precoder, z, &sc), cfg.trials, cfg.seed).context("Monte-Carlo confirmation")?;
    let tr = OptimizationTrace { records, selection: sel.indices(), z, phi: phi.angles().to_vec(), esr };
    if let Some(path) = trace {
        let target = if path.is_absolute() { path.to_path_buf() } else { cli.out_dir.join(path) };
        let dir = target.parent().unwrap_or(Path::new("."));
        tr.write_csv(create(dir, &target.file_name().unwrap_or_default().to_string_lossy())?, timing)?;
    }
    let sol = Solution {
        scenario_id: cfg.scenario.id.clone(),
        mode: name,
        precoder,
        selection: tr.selection,
        phi: tr.phi,
        z,
        esr,
        monte_carlo: mc,
    };
    let target = if out.is_absolute() { out.to_path_buf() } else { cli.out_dir.join(out) };
    let dir = target.parent().unwrap_or(Path::new("."));
    serde_json::to_writer_pretty(create(dir, &target.file_name().unwrap_or_default().to_string_lossy())?, &sol)?;
    println!("{name}: ESR {esr:.6} (Monte Carlo {:.6} ± {:.2e})", sol.monte_carlo.mean, sol.monte_carlo.stderr);
    Ok(())
}

fn parse_fault(s: &str) -> Result<(usize, usize, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("--fault-pi expects ROW,COL,FACTOR");
    }
    Ok((parts[0].parse()?, parts[1].parse()?, parts[2].parse()?))
}

fn cmd_validate(cli: &Cli, trials: Option<usize>, strict: bool, fault: Option<&str>) -> Result<bool> {
    let cfg = load(cli)?;
    let mut opts = ValidateOptions::from_config(&cfg);
    if let Some(t) = trials {
        opts.trials = t;
    }
    opts.pi_fault = fault.map(parse_fault).transpose()?;
    let report = validate(&cfg, &opts);
    print!("{report}");
    report.write_csv(create(&cli.out_dir, &format!("{}-validate.csv", cfg.scenario.id))?)?;
    Ok(!strict || report.passed())
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match &cli.cmd {
        Cmd::Evaluate { precoder } => cmd_evaluate(cli, precoder)?,
        Cmd::Montecarlo { trials, precoder } => cmd_montecarlo(cli, *trials, precoder)?,
        Cmd::Optimize { mode, precoder, trace, out, timing } => cmd_optimize(cli, *mode, *precoder, trace.as_deref(), out, *timing)?,
        Cmd::Sweep { timing } => run_sweep(&load(cli)?, &cli.out_dir, *timing)?,
        Cmd::Validate { trials, strict, fault_pi } => return cmd_validate(cli, *trials, *strict, fault_pi.as_deref()),
        Cmd::Figure { name, trials, timing, dump } => {
            let mut cfg = recipe(name)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = *t;
            }
            if *dump {
                print!("{}", cfg.to_toml()?);
            } else {
                run_sweep(&cfg, &cli.out_dir, *timing)?;
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<fasris::Error>().is_some_and(|e| matches!(e, fasris::Error::Config(_)))
                || e.chain().any(|c| matches!(c.downcast_ref::<fasris::Error>(), Some(fasris::Error::Context { source, .. }) if matches!(**source, fasris::Error::Config(_))));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
