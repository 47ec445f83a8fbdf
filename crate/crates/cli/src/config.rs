//! Declarative run configuration (TOML) and the shipped presets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use auxabc::{
    DistanceKind, ErythroblastModel64, ErythroblastParams, ErythroblastParams64, NaiveMode,
    ParameterVector64, Prior64, SmcConfig, Weighting,
};
use serde::{Deserialize, Serialize};

pub const PAPER_PRESET: &str = include_str!("../../../configs/paper.toml");
pub const DESK_PRESET: &str = include_str!("../../../configs/desk.toml");

/// A configuration problem located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub prior: BTreeMap<String, [f64; 2]>,
    pub engine: EngineConfig,
    pub data: DataConfig,
    pub experiment: GridConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Only `"erythroblast"` is built in.
    pub name: String,
    pub true_params: BTreeMap<String, f64>,
    pub init: [f64; 2],
    pub dt: f64,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub particles: usize,
    pub alpha: f64,
    pub replications: usize,
    pub min_acceptance: f64,
    pub max_generations: usize,
    pub distance: DistanceKind,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub naive_mode: NaiveMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub noise_levels: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub macro_replications: usize,
    pub predictive_samples: usize,
    pub target_t: usize,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
}

fn default_weighting() -> Weighting {
    Weighting::Weighted
}

/// One `(v, m)` cell of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub noise: f64,
    pub batches: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::at(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
            .map_err(|e| ConfigError::at(e.path, format!("{} (in {})", e.message, path.display())))
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "paper" => Self::from_toml(PAPER_PRESET),
            "desk" => Self::from_toml(DESK_PRESET),
            other => Err(ConfigError::at(
                "--preset",
                format!("unknown preset {other:?} (expected paper or desk)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let names = ErythroblastParams64::NAMES;
        if self.model.name != "erythroblast" {
            return Err(ConfigError::at(
                "model.name",
                format!("unknown model {:?} (only erythroblast is built in)", self.model.name),
            ));
        }
        check_names("model.true_params", self.model.true_params.keys(), &names)?;
        check_names("prior", self.prior.keys(), &names)?;
        for (name, value) in &self.model.true_params {
            if !value.is_finite() {
                return Err(ConfigError::at(format!("model.true_params.{name}"), "must be finite"));
            }
        }
        for (name, [lo, hi]) in &self.prior {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ConfigError::at(
                    format!("prior.{name}"),
                    "bounds must be finite with low < high",
                ));
            }
        }
        if !(self.model.dt.is_finite() && self.model.dt > 0.0) {
            return Err(ConfigError::at("model.dt", "must be positive"));
        }
        if self.model.horizon == 0 {
            return Err(ConfigError::at("model.horizon", "must be at least 1"));
        }
        if self.model.init.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::at("model.init", "must be finite"));
        }
        if self.data.batches < 2 {
            return Err(ConfigError::at("data.batches", "need at least 2 trajectories"));
        }
        self.smc_config()
            .validate()
            .map_err(|e| ConfigError::at("engine", e.to_string()))?;

        let grid = &self.experiment;
        if grid.noise_levels.is_empty() {
            return Err(ConfigError::at("experiment.noise_levels", "must not be empty"));
        }
        for (i, v) in grid.noise_levels.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(ConfigError::at(
                    format!("experiment.noise_levels[{i}]"),
                    "must be a non-negative number",
                ));
            }
        }
        if grid.batch_sizes.is_empty() {
            return Err(ConfigError::at("experiment.batch_sizes", "must not be empty"));
        }
        for (i, m) in grid.batch_sizes.iter().enumerate() {
            if *m < 2 {
                return Err(ConfigError::at(
                    format!("experiment.batch_sizes[{i}]"),
                    "need at least 2 trajectories",
                ));
            }
        }
        if grid.macro_replications < 2 {
            return Err(ConfigError::at("experiment.macro_replications", "must be at least 2"));
        }
        if grid.predictive_samples == 0 {
            return Err(ConfigError::at("experiment.predictive_samples", "must be at least 1"));
        }
        if !(1..=self.model.horizon + 1).contains(&grid.target_t) {
            return Err(ConfigError::at(
                "experiment.target_t",
                format!("must lie in 1..={}", self.model.horizon + 1),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> ErythroblastModel64 {
        ErythroblastModel64 {
            init: self.model.init,
            horizon: self.model.horizon,
            dt: self.model.dt,
        }
    }

    /// Parameter names in the model's canonical order.
    pub fn names(&self) -> Vec<String> {
        ErythroblastParams64::NAMES.iter().map(|s| s.to_string()).collect()
    }

    pub fn prior(&self) -> Prior64 {
        let bounds = self
            .names()
            .iter()
            .map(|n| {
                let [lo, hi] = self.prior[n];
                (lo, hi)
            })
            .collect();
        Prior64::new(self.names(), bounds).expect("validated prior")
    }

    pub fn truth(&self) -> ErythroblastParams64 {
        let values = self.names().iter().map(|n| self.model.true_params[n]).collect();
        let theta = ParameterVector64::new(self.names(), values).expect("validated names");
        ErythroblastParams::from_vector(&theta).expect("validated names")
    }

    pub fn smc_config(&self) -> SmcConfig {
        SmcConfig {
            particles: self.engine.particles,
            alpha: self.engine.alpha,
            replications: self.engine.replications,
            min_acceptance: self.engine.min_acceptance,
            max_generations: self.engine.max_generations,
            seed: self.seed,
            workers: None,
        }
    }

    /// The cross product of noise levels and batch sizes, noise-major.
    pub fn cells(&self) -> Vec<Cell> {
        self.experiment
            .noise_levels
            .iter()
            .flat_map(|&noise| {
                self.experiment
                    .batch_sizes
                    .iter()
                    .map(move |&batches| Cell { noise, batches })
            })
            .collect()
    }

    /// Compact JSON echo used in output headers.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn check_names<'a>(
    path: &str,
    keys: impl Iterator<Item = &'a String>,
    names: &[&str],
) -> Result<(), ConfigError> {
    let keys: Vec<&String> = keys.collect();
    for key in &keys {
        if !names.contains(&key.as_str()) {
            return Err(ConfigError::at(
                format!("{path}.{key}"),
                format!("unknown parameter (model parameters are {})", names.join(", ")),
            ));
        }
    }
    for name in names {
        if !keys.iter().any(|k| k == name) {
            return Err(ConfigError::at(format!("{path}.{name}"), "missing"));
        }
    }
    Ok(())
}
