//! The pipeline config file and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{LrSchedule, StagePlan};
use crate::eval::{DeductionWeights, Precedence};
use crate::io::{self, IoError};
use crate::mono::HeuristicScorer;
use crate::parallel::FilterThresholds;
use crate::reward::SimilarityParams;
use crate::service::{DecodeParams, HttpBackend, RetryPolicy, Service, StubBackend};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("path key {0:?} is not declared in the config")]
    UndeclaredPath(String),
    #[error("service {service}: {msg}")]
    Service { service: String, msg: String },
    #[error("environment variable {var}: {msg}")]
    Env { var: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpora: Option<PathBuf>,
    pub shards: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

impl Paths {
    pub fn require(&self, key: &str) -> Result<&Path, ConfigError> {
        let p = match key {
            "corpora" => &self.corpora,
            "shards" => &self.shards,
            "profiles" => &self.profiles,
            "templates" => &self.templates,
            "vocab" => &self.vocab,
            _ => &None,
        };
        p.as_deref().ok_or_else(|| ConfigError::UndeclaredPath(key.to_string()))
    }
}

/// One model service. `stub` wins over `endpoint` when both are set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceEndpoint {
    pub endpoint: Option<String>,
    /// Name of an environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub stub: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Services {
    pub translator: ServiceEndpoint,
    pub paraphraser: ServiceEndpoint,
    pub preference_scorer: ServiceEndpoint,
    pub metric: ServiceEndpoint,
    pub retry: RetryPolicy,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ServiceRole {
    Translator,
    Paraphraser,
    PreferenceScorer,
    Metric,
}

impl ServiceRole {
    pub fn key(self) -> &'static str {
        match self {
            ServiceRole::Translator => "translator",
            ServiceRole::Paraphraser => "paraphraser",
            ServiceRole::PreferenceScorer => "preference_scorer",
            ServiceRole::Metric => "metric",
        }
    }

    fn default_stub(self) -> StubBackend {
        match self {
            ServiceRole::Translator | ServiceRole::Paraphraser => StubBackend::Echo,
            ServiceRole::PreferenceScorer | ServiceRole::Metric => StubBackend::Constant(0.5),
        }
    }

    fn env_var(self) -> String {
        format!("SEEDLINE_{}_ENDPOINT", self.key().to_uppercase())
    }
}

impl Services {
    fn endpoint(&self, role: ServiceRole) -> &ServiceEndpoint {
        match role {
            ServiceRole::Translator => &self.translator,
            ServiceRole::Paraphraser => &self.paraphraser,
            ServiceRole::PreferenceScorer => &self.preference_scorer,
            ServiceRole::Metric => &self.metric,
        }
    }

    fn endpoint_mut(&mut self, role: ServiceRole) -> &mut ServiceEndpoint {
        match role {
            ServiceRole::Translator => &mut self.translator,
            ServiceRole::Paraphraser => &mut self.paraphraser,
            ServiceRole::PreferenceScorer => &mut self.preference_scorer,
            ServiceRole::Metric => &mut self.metric,
        }
    }

    /// Builds the service for `role`. With `force_stub`, endpoints are
    /// ignored and the configured stub (or the role's default stub) is used.
    pub fn build(&self, role: ServiceRole, force_stub: bool) -> Result<Service, ConfigError> {
        let ep = self.endpoint(role);
        let err = |msg: String| ConfigError::Service { service: role.key().to_string(), msg };
        if let Some(sel) = &ep.stub {
            return Ok(Service::stub(StubBackend::parse(sel).map_err(err)?));
        }
        match (&ep.endpoint, force_stub) {
            (Some(url), false) => {
                let token = ep.token_env.as_ref().and_then(|v| std::env::var(v).ok());
                Ok(Service::new(HttpBackend::new(url.clone(), token), self.retry.clone()))
            }
            (None, false) => Err(err("no endpoint or stub configured (use --stub for offline runs)".into())),
            (_, true) => Ok(Service::stub(role.default_stub())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub similarity: SimilarityParams,
    pub rollouts_per_query: usize,
    pub temperature: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { similarity: SimilarityParams::default(), rollouts_per_query: 8, temperature: Some(1.0) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub precedence: Precedence,
    pub deduction: DeductionWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub thresholds: FilterThresholds,
    pub quality: HeuristicScorer,
    pub services: Services,
    pub curriculum: Option<StagePlan>,
    pub lr: LrSchedule,
    pub reward: RewardConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub max_in_flight: usize,
    pub em_iterations: usize,
    pub max_seq_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            thresholds: FilterThresholds::default(),
            quality: HeuristicScorer::default(),
            services: Services::default(),
            curriculum: None,
            lr: LrSchedule::default(),
            reward: RewardConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            max_in_flight: 4,
            em_iterations: 5,
            max_seq_len: 2048,
        }
    }
}

impl PipelineConfig {
    /// Parses a JSON config. Unknown keys at any level are rejected.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            ConfigError::Invalid(msg) => ConfigError::Invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be at least 1".into()));
        }
        if self.em_iterations == 0 {
            return Err(ConfigError::Invalid("em_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies `SEEDLINE_SEED` and `SEEDLINE_<SERVICE>_ENDPOINT` overrides
    /// taken from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("SEEDLINE_SEED") {
            self.seed = v.trim().parse().map_err(|_| ConfigError::Env { var: "SEEDLINE_SEED".into(), msg: format!("not an integer: {v:?}") })?;
        }
        for role in [ServiceRole::Translator, ServiceRole::Paraphraser, ServiceRole::PreferenceScorer, ServiceRole::Metric] {
            if let Some(url) = lookup(&role.env_var()) {
                self.services.endpoint_mut(role).endpoint = Some(url);
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        io::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Provenance record written beside a subcommand's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub counts: BTreeMap<String, u64>,
    pub wall_time_ms: u64,
    pub toolkit_version: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config_hash: impl Into<String>) -> Self {
        RunManifest {
            command: command.into(),
            config_hash: config_hash.into(),
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            wall_time_ms: 0,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), IoError> {
        self.input_hashes.insert(path.display().to_string(), io::sha256_file(path)?);
        Ok(())
    }

    /// Conventional location: `<output>.manifest.json` for files,
    /// `<dir>/run_manifest.json` for directories.
    pub fn path_for(output: &Path) -> PathBuf {
        if output.is_dir() {
            output.join("run_manifest.json")
        } else {
            let mut s = output.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        io::write_json(path, self)
    }
}
