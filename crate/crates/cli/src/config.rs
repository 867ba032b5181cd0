//! Run configuration file and flag/env/file precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tpis_core::evaluation::{EvalSettings, DEFAULT_RUNS, DEFAULT_TRAIN_PER_CLASS};
use tpis_core::learners::LearnerParams;
use tpis_core::pipeline::{TpisConfig, DEFAULT_LAYER_KINDS};
use tpis_core::preprocess::PreprocessOptions;
use tpis_core::stacking::{ConfidencePolicy, DEFAULT_EPSILON, DEFAULT_FOLDS, DEFAULT_ROUTE_THRESHOLD};
use tpis_core::{Result, TpisError};

pub const ENV_HOST: &str = "TPIS_HOST";
pub const ENV_PORT: &str = "TPIS_PORT";
pub const ENV_MODEL: &str = "TPIS_MODEL";
pub const ENV_CONFIG: &str = "TPIS_CONFIG";

pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SESSION_TTL_SECS: u64 = 1800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub layer1: Vec<LearnerParams>,
    pub layer2: Vec<LearnerParams>,
    pub step2: Vec<LearnerParams>,
    /// Overrides for single-learner rows of comparison tables.
    pub single: Vec<LearnerParams>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let layer: Vec<LearnerParams> = DEFAULT_LAYER_KINDS.iter().map(|k| k.default_params()).collect();
        Self { layer1: layer.clone(), layer2: layer.clone(), step2: layer, single: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub session_ttl_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { host: None, port: None, session_ttl_secs: DEFAULT_SESSION_TTL_SECS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub epsilon: f64,
    pub route_threshold: f64,
    pub folds: usize,
    pub runs: usize,
    pub train_per_class: usize,
    pub preprocess: PreprocessOptions,
    pub learners: LearnerConfig,
    pub paths: PathConfig,
    pub server: ServerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            route_threshold: DEFAULT_ROUTE_THRESHOLD,
            folds: DEFAULT_FOLDS,
            runs: DEFAULT_RUNS,
            train_per_class: DEFAULT_TRAIN_PER_CLASS,
            preprocess: PreprocessOptions::default(),
            learners: LearnerConfig::default(),
            paths: PathConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| TpisError::ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TpisError::ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn policy(&self) -> ConfidencePolicy {
        ConfidencePolicy { epsilon: self.epsilon, route_threshold: self.route_threshold }
    }

    pub fn tpis(&self) -> TpisConfig {
        TpisConfig {
            seed: self.seed,
            folds: self.folds,
            policy: self.policy(),
            preprocess: self.preprocess,
            layer1: self.learners.layer1.clone(),
            layer2: self.learners.layer2.clone(),
            step2: self.learners.step2.clone(),
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            runs: self.runs,
            train_per_class: self.train_per_class,
            seed: self.seed,
            tpis: self.tpis(),
            learners: self.learners.single.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, layer) in
            [("layer1", &self.learners.layer1), ("layer2", &self.learners.layer2), ("step2", &self.learners.step2)]
        {
            if layer.len() < 2 {
                return Err(TpisError::ConfigError(format!("learners.{name} needs at least 2 learners")));
            }
        }
        self.eval_settings().validate()
    }
}

/// Loads the config named by the flag, else by `TPIS_CONFIG`, else defaults.
pub fn load_config(flag: Option<&Path>, env: &dyn Fn(&str) -> Option<String>) -> Result<RunConfig> {
    match flag.map(Path::to_path_buf).or_else(|| env(ENV_CONFIG).map(PathBuf::from)) {
        Some(path) => RunConfig::load(&path),
        None => Ok(RunConfig::default()),
    }
}

pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeSettings {
    pub host: String,
    pub port: u16,
    pub model: Option<PathBuf>,
    pub session_ttl_secs: u64,
}

/// Flags win over environment variables, which win over the config file.
pub fn resolve_serve(
    host: Option<String>,
    port: Option<u16>,
    model: Option<PathBuf>,
    file: &RunConfig,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<ServeSettings> {
    let env_port = match env(ENV_PORT) {
        Some(p) => Some(
            p.parse::<u16>()
                .map_err(|_| TpisError::ConfigError(format!("{ENV_PORT}=`{p}` is not a port number")))?,
        ),
        None => None,
    };
    Ok(ServeSettings {
        host: host
            .or_else(|| env(ENV_HOST))
            .or_else(|| file.server.host.clone())
            .unwrap_or_else(|| DEFAULT_HOST.to_string()),
        port: port.or(env_port).or(file.server.port).unwrap_or(DEFAULT_PORT),
        model: model.or_else(|| env(ENV_MODEL).map(PathBuf::from)).or_else(|| file.paths.model.clone()),
        session_ttl_secs: file.server.session_ttl_secs,
    })
}
