//! Run configuration: one JSON document drives every subcommand, and every
//! run emits a manifest embedding the full configuration so it can be
//! reproduced bit for bit.

use epifilter::estimate::{EbolaTheta, Prior, PriorSpec};
use epifilter::model::{KernelSpec, ModelSpec};
use epifilter::types::{ParamRecord, ProbVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: String,
    pub theta: BTreeMap<String, f64>,
    pub n: u64,
    /// Initial distribution; defaults to the family convention (one
    /// expected index case) where one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi0: Option<Vec<f64>>,
}

impl ModelConfig {
    pub fn param_record(&self) -> ParamRecord {
        let mut rec = ParamRecord::new();
        for (k, v) in &self.theta {
            rec.insert(k, *v);
        }
        rec
    }

    pub fn build(&self) -> Result<ModelSpec, CliError> {
        let kernel = KernelSpec::from_family(&self.family, &self.param_record())
            .map_err(|e| CliError::Config(e.to_string()))?;
        let pi0 = match &self.pi0 {
            Some(v) => ProbVector::new(v.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            None => kernel.default_pi0(self.n).ok_or_else(|| {
                CliError::Config(format!(
                    "family '{}' has no default initial distribution; supply model.pi0",
                    self.family
                ))
            })?,
        };
        ModelSpec::new(self.n, pi0, kernel).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    X,
    Z,
}

/// One reported cell: compartment `i` (vector mode) or transition `i -> j`
/// (matrix mode), 1-based, with its reporting probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportedCell {
    pub i: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationConfig {
    pub mode: ObsMode,
    #[serde(default)]
    pub cells: Vec<ReportedCell>,
}

impl ObservationConfig {
    pub fn cells_z(&self, m: usize) -> Result<Vec<(usize, usize, f64)>, CliError> {
        self.cells
            .iter()
            .map(|c| {
                let j = c.j.ok_or_else(|| {
                    CliError::Config("matrix-mode cells need both i and j".into())
                })?;
                if c.i < 1 || c.i > m || j < 1 || j > m {
                    return Err(CliError::Config(format!(
                        "cell ({}, {j}) out of range for m = {m}",
                        c.i
                    )));
                }
                Ok((c.i - 1, j - 1, c.q))
            })
            .collect()
    }

    pub fn q_vector(&self, m: usize) -> Result<Vec<f64>, CliError> {
        let mut q = vec![0.0; m];
        for c in &self.cells {
            if c.j.is_some() {
                return Err(CliError::Config(
                    "vector-mode cells must not carry a j index".into(),
                ));
            }
            if c.i < 1 || c.i > m {
                return Err(CliError::Config(format!(
                    "cell {} out of range for m = {m}",
                    c.i
                )));
            }
            q[c.i - 1] = c.q;
        }
        Ok(q)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Steps(u64),
    UntilExtinction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputPaths {
    pub obs: String,
    /// Extend the series to at least this horizon when trailing steps are
    /// fully missing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmSection {
    pub beta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_em_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_em_max_iters")]
    pub max_iters: usize,
    pub init: EmInit,
}

fn default_em_tolerance() -> f64 {
    1e-6
}

fn default_em_max_iters() -> usize {
    500
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmInit {
    pub rho: f64,
    pub gamma: f64,
    pub q_cases: f64,
    pub q_deaths: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorChoice {
    Named(String),
    Explicit {
        beta: Prior,
        lambda: Prior,
        rho: Prior,
        gamma: Prior,
        q_cases: Prior,
        q_deaths: Prior,
    },
}

impl PriorChoice {
    pub fn resolve(&self) -> Result<PriorSpec, CliError> {
        match self {
            PriorChoice::Named(name) => PriorSpec::by_name(name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown prior preset '{name}' (expected vague, informative or noncentered)"
                ))
            }),
            PriorChoice::Explicit {
                beta,
                lambda,
                rho,
                gamma,
                q_cases,
                q_deaths,
            } => Ok(PriorSpec {
                beta: *beta,
                lambda: *lambda,
                rho: *rho,
                gamma: *gamma,
                q_cases: *q_cases,
                q_deaths: *q_deaths,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcSection {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub priors: PriorChoice,
    #[serde(default)]
    pub proposal_sd: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    pub adapt: bool,
}

fn default_thin() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedSection {
    pub gamma: f64,
    pub kappa: f64,
    pub q_onset_local: f64,
    pub q_onset_travel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmcSection {
    pub n_part: usize,
    pub sigma_v: f64,
    pub beta0: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_draws_per_run")]
    pub draws_per_run: usize,
    #[serde(default)]
    pub systematic_resampling: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<DerivedSection>,
}

fn default_runs() -> usize {
    100
}

fn default_draws_per_run() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasCoverageSection {
    pub n_values: Vec<u64>,
    pub replicates: usize,
    pub t: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

/// Whether simulation starts from a multinomial draw of the initial
/// distribution or fixed counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Multinomial,
    Fixed(Vec<u64>),
    /// Family convention: `n - 1` susceptible, one exposed index case.
    IndexCase,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::IndexCase
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Horizon>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<EmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcmc: Option<McmcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smc: Option<SmcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_coverage: Option<BiasCoverageSection>,
}

impl RunConfig {
    /// Load from a JSON file. A manifest written by a previous run (an
    /// object with a `config` key) is accepted and unwrapped, so any run is
    /// reproducible from its manifest alone.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid JSON in {}: {e}", path.display())))?;
        let config_value = match value.get("config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(config_value)
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
    }

    /// Parameters of the six-parameter outbreak model, for the fitting
    /// commands.
    pub fn ebola_theta(&self) -> Result<EbolaTheta, CliError> {
        let get = |k: &str| {
            self.model
                .theta
                .get(k)
                .copied()
                .ok_or_else(|| CliError::Config(format!("model.theta.{k} is required")))
        };
        let cells = self
            .observation
            .as_ref()
            .map(|o| o.cells.clone())
            .unwrap_or_default();
        let q_of = |i: usize, j: usize, fallback: f64| {
            cells
                .iter()
                .find(|c| c.i == i && c.j == Some(j))
                .map_or(fallback, |c| c.q)
        };
        Ok(EbolaTheta {
            beta: get("beta")?,
            lambda: get("lambda")?,
            rho: get("rho")?,
            gamma: get("gamma")?,
            q_cases: q_of(2, 3, 0.5),
            q_deaths: q_of(3, 4, 0.5),
        })
    }
}

/// The manifest written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub results: serde_json::Value,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf, CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
