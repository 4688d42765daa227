//! Suite configuration read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fields::{DriftConfig, PhiConfig};
use crate::model::ModelConfig;
use crate::ou::QuadratureSpec;
use crate::perturbation::solver::SolverConfig;
use crate::sampler::SupSampler;
use crate::sde::SdeParams;
use crate::{Error, Result};

/// Everything `run_suite` needs. Every section has defaults, so an empty
/// file describes the one-dimensional reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Master seed; overrides the `quadrature` and `sde` seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ModelConfig::reference")]
    pub model: ModelConfig,
    #[serde(default = "PhiConfig::cos")]
    pub phi: PhiConfig,
    #[serde(default = "default_drift")]
    pub drift: DriftConfig,
    #[serde(default)]
    pub sup_sampler: SupSampler,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub sde: SdeParams,
    #[serde(default)]
    pub suite: SuiteSettings,
}

fn default_drift() -> DriftConfig {
    DriftConfig::named("tanh_componentwise", 1.0)
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::reference(),
            phi: PhiConfig::cos(),
            drift: default_drift(),
            sup_sampler: SupSampler::default(),
            solver: SolverConfig::default(),
            quadrature: QuadratureSpec::default(),
            sde: SdeParams::default(),
            suite: SuiteSettings::default(),
        }
    }
}

/// Parameter grids of the individual suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSettings {
    pub lambdas: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub feps_eps: Vec<f64>,
    pub flow_times: Vec<f64>,
    pub flow_tol: f64,
    pub ou_points: usize,
    pub contraction_lambdas: Vec<f64>,
    pub contraction_eps: Vec<f64>,
    pub contraction_pairs: usize,
    pub contraction_points: usize,
    pub check_points: usize,
    pub dt_points: usize,
    pub sde_x: f64,
    pub sde_t: f64,
    pub markov_outer: usize,
    pub markov_inner: usize,
    pub closure: bool,
    pub closure_lambda: f64,
    pub closure_eps: Vec<f64>,
    pub closure_grid: Vec<f64>,
    pub closure_paths: Option<usize>,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 2.0, 5.0],
            eps_list: vec![0.5, 0.1, 0.02],
            feps_eps: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            flow_times: vec![0.1, 0.5, 1.0],
            flow_tol: crate::flow::DEFAULT_TOL,
            ou_points: 16,
            contraction_lambdas: vec![1.0, 2.0, 5.0],
            contraction_eps: vec![0.5, 0.1],
            contraction_pairs: 20,
            contraction_points: 8,
            check_points: 128,
            dt_points: 2,
            sde_x: 0.5,
            sde_t: 0.5,
            markov_outer: 256,
            markov_inner: 256,
            closure: true,
            closure_lambda: 2.0,
            closure_eps: vec![0.4, 0.2, 0.1, 0.05],
            closure_grid: (0..9).map(|k| -2.0 + 0.5 * k as f64).collect(),
            closure_paths: None,
        }
    }
}

impl Config {
    /// Parses TOML text. Errors carry the line and column of the offending
    /// entry.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.quadrature.seed = cfg.seed;
        cfg.sde.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sup_sampler.validate()?;
        self.solver.validate()?;
        self.quadrature.validate()?;
        self.sde.validate()?;
        let s = &self.suite;
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("suite.{name} entries must be positive")));
            }
            Ok(())
        };
        positive("lambdas", &s.lambdas)?;
        positive("eps_list", &s.eps_list)?;
        positive("feps_eps", &s.feps_eps)?;
        positive("flow_times", &s.flow_times)?;
        positive("contraction_lambdas", &s.contraction_lambdas)?;
        positive("contraction_eps", &s.contraction_eps)?;
        positive("closure_eps", &s.closure_eps)?;
        if !(s.closure_lambda > 0.0) || !(s.sde_t > 0.0) || !(s.flow_tol > 0.0) {
            return Err(Error::Config(
                "suite.closure_lambda, suite.sde_t and suite.flow_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}
