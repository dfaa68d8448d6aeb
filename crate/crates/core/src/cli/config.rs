//! TOML scenario configuration.
//!
//! ```toml
//! [model]
//! kind = "IndependentTau"          # or "CoxPoisson", "CoxIntensity"
//! hazard_knots = [0.0]
//! hazard_rates = [1.0]
//! atoms = [{ time = 1.0, mass = 0.3 }]
//!
//! [simulation]
//! lambda = 1.0
//! horizon = 10.0
//! n_paths = 10000
//! master_seed = 1
//!
//! [payoff]
//! kind = "UpTo"
//! t0 = 2.0
//! ```
//!
//! The remaining sections (`formulas`, `tolerances`, `mc`, `output`) are optional.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::mc_verify::{ProcessSelector, MIN_PATHS};
use crate::models::{ModelSpec, StateIntensity};
use crate::random_time::CdfSpec;
use crate::representations::FormulaId;
use crate::solvers::{HSpec, StateFunction, Tail, TimeFunction};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub simulation: SimulationConfig,
    pub payoff: PayoffConfig,
    #[serde(default)]
    pub formulas: FormulasConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ModelConfig {
    CoxPoisson,
    CoxIntensity {
        /// `a(0), a(1), …`; the last entry holds for all larger states.
        intensity: Vec<f64>,
    },
    IndependentTau {
        #[serde(default)]
        hazard_knots: Option<Vec<f64>>,
        #[serde(default)]
        hazard_rates: Option<Vec<f64>>,
        #[serde(default)]
        atoms: Vec<AtomConfig>,
        /// τ ≡ t0; excludes every other field.
        #[serde(default)]
        point_mass: Option<f64>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub time: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub lambda: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PayoffConfig {
    /// `1{x = k}`.
    Indicator { k: usize },
    /// `h ≡ value`, on states for Cox models and on time otherwise.
    Constant { value: f64 },
    /// `e^{−βx}`.
    Exponential { beta: f64 },
    /// `h(x) = values[x]`, then `tail` for larger states.
    Table { values: Vec<f64>, tail: f64 },
    /// `1{t ≤ t0}`.
    UpTo { t0: f64 },
    /// Left-continuous piecewise-affine `h(t)`.
    TimePiecewise {
        knots: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulasConfig {
    /// Formula ids, or `"all"` for every applicable formula except negative controls.
    pub ids: Vec<String>,
}

impl Default for FormulasConfig {
    fn default() -> Self {
        Self {
            ids: vec!["all".into()],
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_pathwise")]
    pub pathwise_abs: f64,
    #[serde(default = "default_recursion")]
    pub recursion_abs: f64,
}

fn default_pathwise() -> f64 {
    1e-9
}

fn default_recursion() -> f64 {
    1e-12
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pathwise_abs: default_pathwise(),
            recursion_abs: default_recursion(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    /// 0 disables the Monte Carlo section.
    #[serde(default)]
    pub n_paths: usize,
    /// Defaults to every process.
    #[serde(default)]
    pub selectors: Option<Vec<String>>,
    #[serde(default)]
    pub conditional: Option<ConditionalConfig>,
    #[serde(default)]
    pub pseudo_stopping: bool,
    /// Direct simulation of `E[h_τ]` against `Y_0`.
    #[serde(default)]
    pub direct_payoff: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalConfig {
    pub s: f64,
    /// `"one"`, `"n_min3"` (`N_s ∧ 3`) or `"tau_by_s"` (`1{τ ≤ s}`).
    pub functional: String,
    #[serde(default)]
    pub selectors: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub paths_sample: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            paths_sample: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    One,
    NMin3,
    TauByS,
}

impl Functional {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Self::One),
            "n_min3" => Ok(Self::NMin3),
            "tau_by_s" => Ok(Self::TauByS),
            _ => Err(Error::Config(format!(
                "mc.conditional.functional must be one of one, n_min3, tau_by_s (got {s:?})"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::One => "one",
            Self::NMin3 => "N_s_min_3",
            Self::TauByS => "tau_le_s",
        }
    }
}

pub fn parse_selector(s: &str) -> Result<ProcessSelector> {
    ProcessSelector::ALL
        .iter()
        .copied()
        .find(|p| p.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Config(format!("mc.selectors: unknown process {s:?}")))
}

fn selectors(list: &Option<Vec<String>>) -> Result<Vec<ProcessSelector>> {
    match list {
        None => Ok(ProcessSelector::ALL.to_vec()),
        Some(v) => v.iter().map(|s| parse_selector(s)).collect(),
    }
}

/// A validated configuration, ready to run.
#[derive(Clone, Debug)]
pub struct Validated {
    pub experiment: Experiment,
    pub n_paths: usize,
    pub master_seed: u64,
    pub formulas: Vec<FormulaId>,
    pub tolerances: Tolerances,
    pub mc_paths: usize,
    pub mc_selectors: Vec<ProcessSelector>,
    pub conditional: Option<(f64, Functional, Vec<ProcessSelector>)>,
    pub pseudo_stopping: bool,
    pub direct_payoff: bool,
    pub out_dir: PathBuf,
    pub paths_sample: usize,
}

fn config_err(field: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { .. } | Error::Config(_) => e,
        other => Error::Config(format!("{field}: {other}")),
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        match self {
            ModelConfig::CoxPoisson => Ok(ModelSpec::CoxPoisson),
            ModelConfig::CoxIntensity { intensity } => Ok(ModelSpec::CoxIntensity {
                intensity: StateIntensity::new(intensity.clone()).map_err(|e| config_err("model.intensity", e))?,
            }),
            ModelConfig::IndependentTau {
                hazard_knots,
                hazard_rates,
                atoms,
                point_mass,
            } => {
                let cdf = if let Some(t0) = point_mass {
                    if hazard_knots.is_some() || hazard_rates.is_some() || !atoms.is_empty() {
                        return Err(Error::Config(
                            "model.point_mass excludes hazard_knots, hazard_rates and atoms".into(),
                        ));
                    }
                    CdfSpec::point_mass(*t0)
                } else {
                    let rates = hazard_rates
                        .clone()
                        .ok_or_else(|| Error::Config("model.hazard_rates is required".into()))?;
                    let knots = hazard_knots.clone().unwrap_or_else(|| vec![0.0]);
                    atoms
                        .iter()
                        .try_fold(CdfSpec::piecewise_hazard(knots, rates)?, |cdf, a| {
                            cdf.with_atom(a.time, a.mass)
                        })
                }
                .map_err(|e| config_err("model", e))?;
                Ok(ModelSpec::IndependentTau { cdf })
            }
        }
    }
}

impl PayoffConfig {
    pub fn build(&self, model: &ModelSpec) -> Result<HSpec> {
        let on_time = matches!(model, ModelSpec::IndependentTau { .. });
        let h = match self {
            PayoffConfig::Constant { value } if on_time => TimeFunction::constant(*value).map(HSpec::Time),
            PayoffConfig::Constant { value } => StateFunction::constant(*value).map(HSpec::State),
            PayoffConfig::Indicator { k } => Ok(HSpec::State(StateFunction::indicator(*k))),
            PayoffConfig::Exponential { beta } => StateFunction::exponential(*beta).map(HSpec::State),
            PayoffConfig::Table { values, tail } => StateFunction::new(
                values.clone(),
                Tail::Constant(*tail),
                format!("Table({values:?}; {tail})"),
            )
            .map(HSpec::State),
            PayoffConfig::UpTo { t0 } => TimeFunction::indicator_until(*t0).map(HSpec::Time),
            PayoffConfig::TimePiecewise { knots, values, slopes } => {
                TimeFunction::new(knots.clone(), values.clone(), slopes.clone(), "Piecewise").map(HSpec::Time)
            }
        }
        .map_err(|e| config_err("payoff", e))?;
        Ok(h)
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks every field before any simulation runs.
    pub fn validate(&self) -> Result<Validated> {
        let sim = &self.simulation;
        if !sim.lambda.is_finite() || sim.lambda < 0.0 {
            return Err(Error::Config("lambda must be ≥ 0".into()));
        }
        if !sim.horizon.is_finite() || sim.horizon <= 0.0 {
            return Err(Error::Config("horizon must be > 0".into()));
        }
        if sim.n_paths == 0 {
            return Err(Error::Config("n_paths must be > 0".into()));
        }
        let tol = self.tolerances;
        if !(tol.pathwise_abs > 0.0 && tol.recursion_abs > 0.0) {
            return Err(Error::Config("tolerances must be > 0".into()));
        }
        let model = self.model.build()?;
        let h = self.payoff.build(&model)?;
        let experiment = Experiment::new(model, sim.lambda, sim.horizon, h).map_err(|e| config_err("payoff", e))?;

        let mut formulas = Vec::new();
        for id in &self.formulas.ids {
            if id.eq_ignore_ascii_case("all") {
                formulas.extend(
                    FormulaId::applicable(&experiment.model, &experiment.h)
                        .into_iter()
                        .filter(|f| !f.is_negative_control()),
                );
                continue;
            }
            let f: FormulaId = id.parse()?;
            if !f.applies_to(&experiment.model, &experiment.h) {
                return Err(Error::Config(format!(
                    "formulas: {f} is not applicable to {} with payoff {}",
                    experiment.model.name(),
                    experiment.h.name()
                )));
            }
            formulas.push(f);
        }
        let mut seen = Vec::new();
        formulas.retain(|f| {
            let fresh = !seen.contains(f);
            seen.push(*f);
            fresh
        });

        let mc = &self.mc;
        if mc.n_paths != 0 && mc.n_paths < MIN_PATHS {
            return Err(Error::Config(format!("mc.n_paths must be 0 or ≥ {MIN_PATHS}")));
        }
        let conditional = match &mc.conditional {
            None => None,
            Some(c) => {
                if !(0.0..=sim.horizon).contains(&c.s) {
                    return Err(Error::Config("mc.conditional.s must lie in [0, horizon]".into()));
                }
                Some((c.s, Functional::parse(&c.functional)?, selectors(&c.selectors)?))
            }
        };
        Ok(Validated {
            experiment,
            n_paths: sim.n_paths,
            master_seed: sim.master_seed,
            formulas,
            tolerances: tol,
            mc_paths: mc.n_paths,
            mc_selectors: selectors(&mc.selectors)?,
            conditional,
            pseudo_stopping: mc.pseudo_stopping,
            direct_payoff: mc.direct_payoff,
            out_dir: self.output.dir.clone(),
            paths_sample: self.output.paths_sample,
        })
    }
}
