//! Scenario configs, figure presets, sweeps and plots.

pub mod plot;
mod run;
pub mod validate;

use serde::{Deserialize, Serialize};

use crate::channel_model::{
    fas_correlation_matrix, ris_correlation_matrix, CorrelationMode, CorrelationSet, Dimensions, LinkGeometry, PlanarFasGeometry,
    RisAngularProfile, Scenario,
};
use crate::deterministic_rate::Precoder;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::optimizer::OptimizerSettings;

pub use run::{run_experiment, write_csv, write_svg, Row, RunOptions, RunOutput, CSV_HEADER};

fn half() -> f64 {
    0.5
}

/// Angular-spread correlation C(d_c, α, β, n). User i gets mean angle α + i·alpha_step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularSpec {
    #[serde(default = "half")]
    pub dc: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub alpha_step: f64,
}

impl AngularSpec {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { dc: 0.5, alpha, beta, alpha_step: 0.0 }
    }

    pub fn stepped(alpha: f64, step: f64, beta: f64) -> Self {
        Self { alpha_step: step, ..Self::new(alpha, beta) }
    }

    fn matrix(&self, user: usize, n: usize) -> Result<CMat> {
        ris_correlation_matrix(&RisAngularProfile {
            dc: self.dc,
            alpha: self.alpha + self.alpha_step * user as f64,
            beta: self.beta,
            l: n,
        })
    }
}

/// BS-side array: i.i.d. ports, a fixed linear array, or a planar fluid-antenna grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BsSpec {
    Iid {
        #[serde(default)]
        m_tot: Option<usize>,
    },
    Ula {
        r: AngularSpec,
        f: AngularSpec,
    },
    Fas {
        wx: f64,
        wy: f64,
        nx: usize,
        ny: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RisSpec {
    Iid,
    Angular { c_l: AngularSpec, c_r: AngularSpec },
}

/// Users sit at d_ris + ⌊i/d_ris_every⌋ metres from the RIS (all at d_ris when d_ris_every = 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySpec {
    pub gain_db: f64,
    pub d_bs_ris: f64,
    pub d_ris: f64,
    pub d_ris_every: usize,
    pub angle_deg: f64,
    pub exp_bs_ris: f64,
    pub exp_ris_user: f64,
    pub exp_bs_user: f64,
    pub d_bs_user: Option<f64>,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            gain_db: -20.0,
            d_bs_ris: 5.0,
            d_ris: 20.0,
            d_ris_every: 2,
            angle_deg: 150.0,
            exp_bs_ris: 2.1,
            exp_ris_user: 2.1,
            exp_bs_user: 3.2,
            d_bs_user: None,
        }
    }
}

impl GeometrySpec {
    pub fn link(&self, k: usize) -> LinkGeometry {
        let d_ris_user = (0..k)
            .map(|i| self.d_ris + i.checked_div(self.d_ris_every).unwrap_or(0) as f64)
            .collect();
        LinkGeometry {
            gain_db: self.gain_db,
            d_bs_ris: self.d_bs_ris,
            d_ris_user,
            angle_deg: self.angle_deg,
            exp_bs_ris: self.exp_bs_ris,
            exp_ris_user: self.exp_ris_user,
            exp_bs_user: self.exp_bs_user,
            d_bs_user: self.d_bs_user.map(|d| vec![d; k]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GainSpec {
    Fixed { u: f64, t: f64 },
    Geometry(GeometrySpec),
}

/// Per-user powers: all ones, or ⌊(k−1)/2⌋ + 1 for user k.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerSpec {
    #[default]
    Ones,
    Pairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: String,
    pub mode: CorrelationMode,
    pub m: usize,
    pub k: usize,
    pub l: usize,
    /// σ⁻² in dB.
    pub snr_db: f64,
    pub bs: BsSpec,
    pub ris: RisSpec,
    pub gains: GainSpec,
    #[serde(default)]
    pub powers: PowerSpec,
}

impl ScenarioSpec {
    pub fn sigma2(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    pub fn m_tot(&self) -> usize {
        match &self.bs {
            BsSpec::Iid { m_tot } => m_tot.unwrap_or(self.m),
            BsSpec::Ula { .. } => self.m,
            BsSpec::Fas { nx, ny, .. } => nx * ny,
        }
    }

    fn per_user(&self) -> bool {
        self.mode == CorrelationMode::Uncommon
    }

    pub fn build(&self) -> Result<Scenario> {
        let (m, k, l, m_tot) = (self.m, self.k, self.l, self.m_tot());
        let dims = Dimensions::new(m, k, m_tot, l)?;
        let users = if self.per_user() { k } else { 1 };
        let (r_tot, f_tot) = match &self.bs {
            BsSpec::Iid { .. } => (linalg::eye(m_tot), vec![linalg::eye(m_tot)]),
            BsSpec::Ula { r, f } => (r.matrix(0, m)?, (0..users).map(|i| f.matrix(i, m)).collect::<Result<_>>()?),
            BsSpec::Fas { wx, wy, nx, ny } => {
                let a = fas_correlation_matrix(&PlanarFasGeometry { wx: *wx, wy: *wy, nx: *nx, ny: *ny })?;
                (a.clone(), vec![a])
            }
        };
        let (c_l, c_r) = match &self.ris {
            RisSpec::Iid => (linalg::eye(l), vec![linalg::eye(l)]),
            RisSpec::Angular { c_l, c_r } => (c_l.matrix(0, l)?, (0..users).map(|i| c_r.matrix(i, l)).collect::<Result<_>>()?),
        };
        let (u, t) = match &self.gains {
            GainSpec::Fixed { u, t } => (vec![*u; k], vec![*t; k]),
            GainSpec::Geometry(g) => g.link(k).gains()?,
        };
        let p = match self.powers {
            PowerSpec::Ones => vec![1.0; k],
            PowerSpec::Pairs => (0..k).map(|i| (i / 2 + 1) as f64).collect(),
        };
        let corr = CorrelationSet { mode: self.mode, r_tot, f_tot, c_l, c_r };
        Scenario::new(dims, corr, u, t, p, self.sigma2())
    }

    /// Copy with one axis set to `v`. `Scale` multiplies (M, K, L) and the grid side.
    pub fn with_axis(&self, axis: Axis, v: f64) -> Result<Self> {
        let int = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} needs positive integer values, got {v}", axis.name())))
            }
        };
        let mut s = self.clone();
        match axis {
            Axis::SnrDb => s.snr_db = v,
            Axis::M => s.m = int(v)?,
            Axis::K => s.k = int(v)?,
            Axis::L => s.l = int(v)?,
            Axis::W => match &mut s.bs {
                BsSpec::Fas { wx, wy, .. } => {
                    *wx = v;
                    *wy = v;
                }
                _ => return Err(Error::Config("aperture sweep needs a fluid-antenna BS".into())),
            },
            Axis::Z => {}
            Axis::Scale => {
                let c = int(v)?;
                s.m *= c;
                s.k *= c;
                s.l *= c;
                if let BsSpec::Iid { m_tot: Some(n) } = &mut s.bs {
                    *n *= c;
                }
            }
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    SnrDb,
    M,
    K,
    L,
    W,
    Z,
    Scale,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::SnrDb => "snr_db",
            Axis::M => "m",
            Axis::K => "k",
            Axis::L => "l",
            Axis::W => "w",
            Axis::Z => "z",
            Axis::Scale => "scale",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl SweepSpec {
    fn validate(&self, what: &str) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config(format!("{what} has no values")));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("{what} values must be finite")));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("{what} values must be strictly increasing")));
        }
        if self.axis == Axis::Z && self.values[0] <= 0.0 {
            return Err(Error::Config("z values must be positive".into()));
        }
        Ok(())
    }
}

/// `de`: deterministic equivalent at the uniform selection and zero phases; `mc`: Monte Carlo
/// at the same point; `uniform`: AO over (z, Φ) at the uniform selection; `joint`: full design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    De,
    Mc,
    Uniform,
    Joint,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::De => "de",
            Method::Mc => "mc",
            Method::Uniform => "uniform",
            Method::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub csv: Option<String>,
    pub svg: Option<String>,
}

fn default_precoders() -> Vec<Precoder> {
    vec![Precoder::Rzf]
}

fn default_methods() -> Vec<Method> {
    vec![Method::De]
}

fn default_trials() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub series: Option<SweepSpec>,
    #[serde(default = "default_precoders")]
    pub precoders: Vec<Precoder>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Context { context: path.display().to_string(), source: Box::new(e) })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.validate("sweep")?;
        if let Some(s) = &self.series {
            s.validate("series")?;
            if s.axis == self.sweep.axis {
                return Err(Error::Config("series and sweep must use different axes".into()));
            }
        }
        if self.precoders.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("need at least one precoder and one method".into()));
        }
        if self.methods.contains(&Method::Mc) && self.trials < 2 {
            return Err(Error::Config("Monte Carlo needs at least two trials".into()));
        }
        self.optimizer.validate()?;
        self.first_point()?.build()?;
        Ok(())
    }

    /// Scenario at the first series value and first sweep value.
    pub fn first_point(&self) -> Result<ScenarioSpec> {
        let mut s = self.scenario.clone();
        if let Some(se) = &self.series {
            s = s.with_axis(se.axis, se.values[0])?;
        }
        s.with_axis(self.sweep.axis, self.sweep.values[0])
    }

    pub fn csv_name(&self) -> String {
        self.output.csv.clone().unwrap_or_else(|| format!("{}.csv", self.scenario.id))
    }

    pub fn svg_name(&self) -> String {
        self.output.svg.clone().unwrap_or_else(|| format!("{}.svg", self.scenario.id))
    }
}

pub const FIGURES: [&str; 8] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8"];

fn snr_grid() -> Vec<f64> {
    vec![60.0, 70.0, 80.0, 90.0, 100.0]
}

/// Per-user ULA/RIS correlations with users spread around the RIS.
pub fn uncommon_scenario(m: usize, k: usize, l: usize, snr_db: f64) -> ScenarioSpec {
    ScenarioSpec {
        id: "uncommon".into(),
        mode: CorrelationMode::Uncommon,
        m,
        k,
        l,
        snr_db,
        bs: BsSpec::Ula { r: AngularSpec::new(10.0, 5.0), f: AngularSpec::stepped(10.0, 2.0, 30.0) },
        ris: RisSpec::Angular { c_l: AngularSpec::new(5.0, 30.0), c_r: AngularSpec::stepped(5.0, 10.0, 30.0) },
        gains: GainSpec::Geometry(GeometrySpec::default()),
        powers: PowerSpec::Ones,
    }
}

/// Planar 10×10 fluid-antenna BS with shared correlations.
pub fn fas_scenario(m: usize, k: usize, snr_db: f64) -> ScenarioSpec {
    ScenarioSpec {
        id: "fas".into(),
        mode: CorrelationMode::Common,
        m,
        k,
        l: 32,
        snr_db,
        bs: BsSpec::Fas { wx: 2.0, wy: 2.0, nx: 10, ny: 10 },
        ris: RisSpec::Angular { c_l: AngularSpec::new(60.0, 5.0), c_r: AngularSpec::new(30.0, 5.0) },
        gains: GainSpec::Geometry(GeometrySpec { d_ris_every: 4, ..Default::default() }),
        powers: PowerSpec::Pairs,
    }
}

/// Same array as [`fas_scenario`] with every user at the first user's position and unit power.
pub fn homogeneous_fas_scenario(m: usize, k: usize, snr_db: f64) -> ScenarioSpec {
    ScenarioSpec {
        id: "fas-homogeneous".into(),
        gains: GainSpec::Geometry(GeometrySpec { d_ris_every: 0, d_bs_user: Some(22.9), ..Default::default() }),
        powers: PowerSpec::Ones,
        ..fas_scenario(m, k, snr_db)
    }
}

/// Built-in figure recipes.
pub fn recipe(name: &str) -> Result<ExperimentConfig> {
    let named = |mut s: ScenarioSpec| {
        s.id = name.to_string();
        s
    };
    let cfg = |scenario, sweep, series, precoders: &[Precoder], methods: &[Method]| ExperimentConfig {
        scenario,
        sweep,
        series,
        precoders: precoders.to_vec(),
        methods: methods.to_vec(),
        trials: 2000,
        seed: 1,
        optimizer: OptimizerSettings::default(),
        output: OutputSpec::default(),
    };
    let opt = [Method::Uniform, Method::Joint];
    let c = match name {
        "fig1" => cfg(
            named(uncommon_scenario(24, 12, 32, 80.0)),
            SweepSpec { axis: Axis::SnrDb, values: snr_grid() },
            Some(SweepSpec { axis: Axis::M, values: vec![16.0, 20.0, 24.0] }),
            &[Precoder::Rzf, Precoder::Zf],
            &[Method::De, Method::Mc],
        ),
        "fig2" => cfg(
            named(uncommon_scenario(8, 6, 16, 80.0)),
            SweepSpec { axis: Axis::Scale, values: vec![1.0, 2.0, 3.0, 4.0] },
            Some(SweepSpec { axis: Axis::M, values: vec![8.0, 12.0] }),
            &[Precoder::Rzf],
            &[Method::De, Method::Mc],
        ),
        "fig3" => cfg(
            named(fas_scenario(20, 8, 80.0)),
            SweepSpec { axis: Axis::SnrDb, values: snr_grid() },
            None,
            &[Precoder::Rzf],
            &opt,
        ),
        "fig4" => cfg(
            named(fas_scenario(20, 8, 80.0)),
            SweepSpec { axis: Axis::SnrDb, values: snr_grid() },
            None,
            &[Precoder::Rzf, Precoder::Zf, Precoder::Mrt],
            &[Method::De, Method::Mc],
        ),
        "fig5" => cfg(
            named(fas_scenario(20, 8, 80.0)),
            SweepSpec { axis: Axis::W, values: vec![0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0] },
            None,
            &[Precoder::Rzf],
            &opt,
        ),
        "fig6" => cfg(
            named(homogeneous_fas_scenario(20, 8, 80.0)),
            SweepSpec { axis: Axis::K, values: vec![4.0, 8.0, 12.0, 16.0] },
            None,
            &[Precoder::Rzf],
            &opt,
        ),
        "fig7" => cfg(
            named(fas_scenario(20, 8, 90.0)),
            SweepSpec { axis: Axis::M, values: vec![8.0, 12.0, 16.0, 20.0, 24.0, 28.0, 32.0] },
            None,
            &[Precoder::Rzf],
            &opt,
        ),
        "fig8" => {
            let s = named(homogeneous_fas_scenario(20, 24, 80.0));
            let z0 = s.k as f64 * s.sigma2() / s.m as f64;
            let values = (0..41).map(|i| z0 * 10f64.powf(-2.0 + 0.1 * i as f64)).collect();
            cfg(s, SweepSpec { axis: Axis::Z, values }, None, &[Precoder::Rzf], &[Method::De])
        }
        _ => return Err(Error::Config(format!("unknown figure '{name}' (expected one of {})", FIGURES.join(", ")))),
    };
    Ok(c)
}
