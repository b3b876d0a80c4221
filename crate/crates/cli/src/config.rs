//! Run configuration: a TOML file (or a previous run's JSON sidecar) plus
//! command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spherecox::fit::{DEFAULT_BINS, DEFAULT_LAG_STEPS};
use spherecox::summaries::{DEFAULT_THETAS, DEFAULT_TS};
use spherecox::{Baseline, BqConvention, CovarianceModel, IntegrationMethod, KEstimator};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub workers: usize,
    pub model: ModelConfig,
    pub window: WindowConfig,
    pub simulate: SimulateConfig,
    pub distances: DistancesConfig,
    pub kfun: KfunConfig,
    pub fit: FitConfig,
    pub classify: ClassifyConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            model: ModelConfig::default(),
            window: WindowConfig::default(),
            simulate: SimulateConfig::default(),
            distances: DistancesConfig::default(),
            kfun: KfunConfig::default(),
            fit: FitConfig::default(),
            classify: ClassifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub theta: f64,
    pub truncation: usize,
    pub variance_scale: f64,
    pub bq_convention: BqConvention,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { theta: 1.0, truncation: 5, variance_scale: 1.0, bq_convention: BqConvention::Weighted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub t0: f64,
    pub t1: f64,
    /// Time-grid nodes for field simulation.
    pub nodes: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { t0: 0.0, t1: 10.0, nodes: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub replicates: usize,
    pub candidate_cap: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { replicates: 1, candidate_cap: spherecox::cox::DEFAULT_CANDIDATE_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistancesConfig {
    pub scales: Vec<usize>,
    pub orders: Vec<f64>,
    pub n: usize,
    pub method: IntegrationMethod,
    pub samples: usize,
    pub nodes_per_axis: usize,
    pub chunk_size: usize,
    /// Degree of the smoothing polynomial over `q`; 0 disables it.
    pub smooth_degree: usize,
}

impl Default for DistancesConfig {
    fn default() -> Self {
        Self {
            scales: (0..=30).collect(),
            orders: vec![1.5, 2.0],
            n: 2,
            method: IntegrationMethod::MonteCarlo,
            samples: 1000,
            nodes_per_axis: 8,
            chunk_size: 1 << 14,
            smooth_degree: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfunConfig {
    pub scales: Vec<usize>,
    /// Also compute the full model K-function.
    pub include_model: bool,
    pub thetas: Vec<f64>,
    pub ts: Vec<f64>,
    pub samples: usize,
    pub chunk_size: usize,
    pub estimator: KEstimator,
    pub baseline: Baseline,
    /// Pattern file for empirical grids.
    pub pattern: Option<PathBuf>,
    /// Intensity used for the empirical grid; estimated from the pattern when absent.
    pub intensity: Option<f64>,
    pub z: f64,
    pub fraction: f64,
}

impl Default for KfunConfig {
    fn default() -> Self {
        Self {
            scales: vec![1, 7, 13, 19, 25],
            include_model: false,
            thetas: DEFAULT_THETAS.to_vec(),
            ts: DEFAULT_TS.to_vec(),
            samples: 100_000,
            chunk_size: 1 << 14,
            estimator: KEstimator::NullControlVariate,
            baseline: Baseline::SelfConsistent,
            pattern: None,
            intensity: None,
            z: 3.0,
            fraction: spherecox::summaries::CLASSIFY_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Field dumps (`l,t,value`) or gridded files (`k,i,value`).
    pub inputs: Vec<PathBuf>,
    /// When no inputs are given, simulate this many replicates from `model`.
    pub simulate_replicates: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub lag_steps: Vec<usize>,
    pub bins: usize,
    pub l_max: usize,
    pub profile_amplitude: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            simulate_replicates: 0,
            n_lat: 8,
            n_lon: 16,
            lag_steps: DEFAULT_LAG_STEPS.to_vec(),
            bins: DEFAULT_BINS,
            l_max: 5,
            profile_amplitude: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Distance table sidecar (`distances.json`) to label per scale.
    pub distances: Option<PathBuf>,
    /// K-grid sidecars (`kfun_*.json`) to label.
    pub kgrids: Vec<PathBuf>,
    pub z: f64,
    pub fraction: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            distances: None,
            kgrids: Vec::new(),
            z: 3.0,
            fraction: spherecox::summaries::CLASSIFY_FRACTION,
        }
    }
}

/// Flag overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub baseline: Option<Baseline>,
    pub bq_convention: Option<BqConvention>,
}

impl Config {
    /// Reads TOML, or a JSON sidecar whose `config` key holds a resolved
    /// configuration.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let config = value
                .get_mut("run")
                .and_then(|r| r.get_mut("config"))
                .map(serde_json::Value::take)
                .or_else(|| value.get_mut("config").map(serde_json::Value::take))
                .ok_or_else(|| CliError::Config(format!("{} has no config key", path.display())))?;
            serde_json::from_value(config).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(b) = o.baseline {
            self.kfun.baseline = b;
        }
        if let Some(c) = o.bq_convention {
            self.model.bq_convention = c;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        self.model()?;
        spherecox::TimeGrid::new(self.window.t0, self.window.t1, self.window.nodes)?;
        Ok(())
    }

    pub fn model(&self) -> Result<CovarianceModel, CliError> {
        Ok(CovarianceModel::with_options(
            self.model.theta,
            self.model.truncation,
            self.model.variance_scale,
            self.model.bq_convention,
        )?)
    }
}
