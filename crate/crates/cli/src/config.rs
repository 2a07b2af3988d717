//! TOML configuration for pipeline and benchmark runs. Relative paths resolve against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use forge_core::dialogue::EngineConfig;
use forge_core::eval::{EvalMode, VotingConfig};
use forge_core::gateway::BackendConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{field}: path {path} does not exist")]
    MissingPath { field: String, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        backend: BackendConfig,
        dim: usize,
    },
}

fn default_dim() -> usize {
    forge_core::embed::HashEmbedder::DEFAULT_DIM
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hash { dim: default_dim() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineBackends {
    pub user: BackendConfig,
    pub assistant: BackendConfig,
    pub goal: BackendConfig,
    pub slots: BackendConfig,
    #[serde(default)]
    pub relevancy: Option<BackendConfig>,
    #[serde(default)]
    pub critique: Option<BackendConfig>,
    /// Rubric judge for conversational relevancy in `score`.
    #[serde(default)]
    pub convrel: Option<BackendConfig>,
}

impl PipelineBackends {
    fn all_mut(&mut self) -> impl Iterator<Item = &mut BackendConfig> {
        [&mut self.user, &mut self.assistant, &mut self.goal, &mut self.slots]
            .into_iter()
            .chain(self.relevancy.as_mut())
            .chain(self.critique.as_mut())
            .chain(self.convrel.as_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub rng_seed: u64,
    pub catalogue: PathBuf,
    /// Persona list (JSON array of strings); the bundled list is used when absent.
    #[serde(default)]
    pub personas: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_persona_k")]
    pub persona_k: usize,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default = "default_regen")]
    pub regen_attempts: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    pub backends: PipelineBackends,
}

fn default_k() -> usize {
    forge_core::scenario::DEFAULT_K
}
fn default_persona_k() -> usize {
    forge_core::scenario::DEFAULT_PERSONA_K
}
fn default_max_turns() -> usize {
    EngineConfig::default().max_turns
}
fn default_regen() -> usize {
    EngineConfig::default().regen_attempts
}
fn default_workers() -> usize {
    4
}
fn default_in_flight() -> usize {
    8
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, PathBuf), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    let value = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((value, base))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(field: &str, p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath { field: field.into(), path: p.into() })
    }
}

fn check_backend(role: &str, b: &BackendConfig) -> Result<(), ConfigError> {
    b.validate().map_err(|e| ConfigError::Invalid(format!("backend `{role}`: {e}")))?;
    if let Some(t) = &b.transcript {
        must_exist(&format!("backends.{role}.transcript"), t)?;
    }
    Ok(())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let (mut cfg, base): (Self, _) = read_toml(path)?;
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.catalogue);
        resolve(base, &mut self.output_dir);
        if let Some(p) = &mut self.personas {
            resolve(base, p);
        }
        for b in self.backends.all_mut() {
            b.resolve_paths(base);
        }
        if let EmbedderConfig::Remote { backend, .. } = &mut self.embedder {
            backend.resolve_paths(base);
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig { max_turns: self.max_turns, regen_attempts: self.regen_attempts }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        must_exist("catalogue", &self.catalogue)?;
        if let Some(p) = &self.personas {
            must_exist("personas", p)?;
        }
        if self.k == 0 || self.persona_k == 0 {
            return Err(ConfigError::Invalid("k and persona_k must be at least 1".into()));
        }
        if self.workers == 0 || self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("workers and max_in_flight must be at least 1".into()));
        }
        self.engine().validate().map_err(ConfigError::Invalid)?;
        let b = &self.backends;
        for (role, cfg) in [("user", &b.user), ("assistant", &b.assistant), ("goal", &b.goal), ("slots", &b.slots)] {
            check_backend(role, cfg)?;
        }
        for (role, cfg) in [("relevancy", &b.relevancy), ("critique", &b.critique), ("convrel", &b.convrel)] {
            if let Some(cfg) = cfg {
                check_backend(role, cfg)?;
            }
        }
        if b.relevancy.is_some() != b.critique.is_some() {
            return Err(ConfigError::Invalid("configure both `relevancy` and `critique` judges or neither".into()));
        }
        match &self.embedder {
            EmbedderConfig::Hash { dim: 0 } | EmbedderConfig::Remote { dim: 0, .. } => {
                Err(ConfigError::Invalid("embedder dim must be positive".into()))
            }
            EmbedderConfig::Remote { backend, .. } => check_backend("embedder", backend),
            EmbedderConfig::Hash { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub rng_seed: u64,
    pub catalogue: PathBuf,
    pub mode: EvalMode,
    /// Scenario file (JSON lines) defining the tasks and their references.
    pub scenarios: PathBuf,
    /// Gold dialogues (JSON lines), required in static mode.
    #[serde(default)]
    pub gold: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_max_turns")]
    pub t_max: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Scenario ids kept out of the scores.
    #[serde(default)]
    pub exclude: Vec<String>,
    pub assistant: BackendConfig,
    #[serde(default)]
    pub voting: Option<VotingConfig>,
    #[serde(default)]
    pub judge: Option<BackendConfig>,
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let (mut cfg, base): (Self, _) = read_toml(path)?;
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.catalogue);
        resolve(base, &mut self.scenarios);
        resolve(base, &mut self.output_dir);
        if let Some(g) = &mut self.gold {
            resolve(base, g);
        }
        self.assistant.resolve_paths(base);
        if let Some(v) = &mut self.voting {
            v.generator.resolve_paths(base);
            v.voter.resolve_paths(base);
        }
        if let Some(j) = &mut self.judge {
            j.resolve_paths(base);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        must_exist("catalogue", &self.catalogue)?;
        must_exist("scenarios", &self.scenarios)?;
        if self.t_max == 0 || self.workers == 0 || self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("t_max, workers and max_in_flight must be at least 1".into()));
        }
        check_backend("assistant", &self.assistant)?;
        if let Some(j) = &self.judge {
            check_backend("judge", j)?;
        }
        match self.mode {
            EvalMode::Static => match &self.gold {
                Some(g) => must_exist("gold", g),
                None => Err(ConfigError::Invalid("static mode needs a `gold` dialogue file".into())),
            },
            EvalMode::Dynamic => {
                let v = self
                    .voting
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("dynamic mode needs a [voting] section".into()))?;
                v.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                check_backend("voting.generator", &v.generator)?;
                check_backend("voting.voter", &v.voter)
            }
        }
    }
}
