//! Run configuration: a TOML file with backends, agent roles, retrieval,
//! retry, pipeline and embedder sections. Secrets come from the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatBackend, HttpBackend, MockBackend, RetryPolicy, API_KEY_ENV, DEFAULT_MAX_TOKENS};
use crate::corpus::{load_corpus, CorpusError, IssueCategory};
use crate::pipeline::{Agent, ExemplarPool, PipelineConfig, PromptStyle, ReviewMode};
use crate::retrieval::{CodeTokenizerConfig, RetrievalError, DEFAULT_B, DEFAULT_K1};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialise config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("agent '{role}' refers to unknown backend '{backend}'")]
    UnknownBackend { role: String, backend: String },
    #[error("mode sfa needs an [agents.fusion] section")]
    MissingFusion,
    #[error("few-shot agents need a [fewshot] section with a corpus path")]
    MissingFewShotCorpus,
    #[error("backend '{name}': {message}")]
    Backend { name: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// OpenAI-compatible chat completions server.
    Http {
        endpoint: String,
        /// Environment variable holding the bearer token.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requests_per_second: Option<f64>,
    },
    /// Scripted responses from a JSONL file.
    Mock { script: PathBuf },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentStyle {
    /// Plain prompt against a fine-tuned adapter.
    #[default]
    Finetuned,
    /// Base model prompted with retrieved demonstrations.
    Fewshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub backend: String,
    pub model: String,
    #[serde(default)]
    pub style: AgentStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentsConfig {
    pub refactoring: AgentConfig,
    pub bugfix: AgentConfig,
    pub testing: AgentConfig,
    pub logging: AgentConfig,
    pub documentation: AgentConfig,
    pub critic: AgentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<AgentConfig>,
}

impl AgentsConfig {
    pub fn commentator(&self, category: IssueCategory) -> &AgentConfig {
        match category {
            IssueCategory::Refactoring | IssueCategory::Others => &self.refactoring,
            IssueCategory::Bugfix => &self.bugfix,
            IssueCategory::Testing => &self.testing,
            IssueCategory::Logging => &self.logging,
            IssueCategory::Documentation => &self.documentation,
        }
    }

    /// (role name, agent) for every configured role.
    pub fn roles(&self) -> Vec<(&'static str, &AgentConfig)> {
        let mut roles: Vec<_> = IssueCategory::ALL.iter().map(|&c| (c.name(), self.commentator(c))).collect();
        roles.push(("critic", &self.critic));
        if let Some(f) = &self.fusion {
            roles.push(("fusion", f));
        }
        roles
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSettings {
    pub k1: f64,
    pub b: f64,
    pub tokenizer: CodeTokenizerConfig,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings { k1: DEFAULT_K1, b: DEFAULT_B, tokenizer: CodeTokenizerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub mode: ReviewMode,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallel: bool,
    /// Batch entries reviewed concurrently.
    pub workers: usize,
    /// Fall back to the Refactoring candidate on unparseable verdicts.
    pub fallback: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            mode: ReviewMode::Standard,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            parallel: true,
            workers: 4,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSettings {
    /// Base URL of the embedding service; unset means the offline mock.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub batch_size: usize,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        EmbedderSettings { endpoint: None, batch_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSettings {
    /// Training corpus the demonstrations are retrieved from.
    pub corpus: PathBuf,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

fn default_shots() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(default)]
    pub retrieval: RetrievalSettings,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub embedder: EmbedderSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<FewShotSettings>,
    pub backends: BTreeMap<String, BackendConfig>,
    pub agents: AgentsConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (role, agent) in self.agents.roles() {
            if !self.backends.contains_key(&agent.backend) {
                return Err(ConfigError::UnknownBackend { role: role.to_string(), backend: agent.backend.clone() });
            }
        }
        if self.pipeline.mode == ReviewMode::Sfa && self.agents.fusion.is_none() {
            return Err(ConfigError::MissingFusion);
        }
        let fewshot = self.agents.roles().iter().any(|(_, a)| a.style == AgentStyle::Fewshot);
        if fewshot && self.fewshot.is_none() {
            return Err(ConfigError::MissingFewShotCorpus);
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn instantiate(&self, name: &str) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        let err = |message: String| ConfigError::Backend { name: name.to_string(), message };
        match &self.backends[name] {
            BackendConfig::Http { endpoint, api_key_env, requests_per_second } => {
                let var = api_key_env.as_deref().unwrap_or(API_KEY_ENV);
                let key = std::env::var(var).ok().filter(|k| !k.is_empty());
                let mut backend = HttpBackend::new(endpoint, key, self.retry).map_err(|e| err(e.to_string()))?;
                if let Some(rps) = requests_per_second {
                    backend = backend.with_rate_limit(*rps);
                }
                Ok(Arc::new(backend))
            }
            BackendConfig::Mock { script } => {
                let path = self.resolve(script);
                let mock = MockBackend::from_script(&path)
                    .map_err(|e| err(format!("cannot load mock script {}: {e}", path.display())))?;
                Ok(Arc::new(mock))
            }
        }
    }

    /// Instantiate every backend once and assemble the pipeline. `mode`
    /// overrides the configured mode when given.
    pub fn build_pipeline(&self, mode: Option<ReviewMode>) -> Result<PipelineConfig, ConfigError> {
        let mode = mode.unwrap_or(self.pipeline.mode);
        if mode == ReviewMode::Sfa && self.agents.fusion.is_none() {
            return Err(ConfigError::MissingFusion);
        }
        let mut backends: BTreeMap<&str, Arc<dyn ChatBackend>> = BTreeMap::new();
        for (_, agent) in self.agents.roles() {
            if !backends.contains_key(agent.backend.as_str()) {
                backends.insert(&agent.backend, self.instantiate(&agent.backend)?);
            }
        }
        let mut pool: Option<Arc<ExemplarPool>> = None;
        let mut agent = |a: &AgentConfig| -> Result<Agent, ConfigError> {
            let base = Agent::new(backends[a.backend.as_str()].clone(), &a.model);
            if a.style == AgentStyle::Finetuned {
                return Ok(base);
            }
            if pool.is_none() {
                let fs = self.fewshot.as_ref().ok_or(ConfigError::MissingFewShotCorpus)?;
                let corpus = load_corpus(self.resolve(&fs.corpus))?;
                let r = &self.retrieval;
                pool = Some(Arc::new(ExemplarPool::build(&corpus, r.tokenizer, r.k1, r.b, fs.shots)?));
            }
            Ok(base.with_style(PromptStyle::FewShot(pool.clone().expect("pool built above"))))
        };
        let commentators =
            IssueCategory::ALL.iter().map(|&c| agent(self.agents.commentator(c))).collect::<Result<Vec<_>, _>>()?;
        let critic = agent(&self.agents.critic)?;
        let fusion = self.agents.fusion.as_ref().map(&mut agent).transpose()?;
        let mut cfg = PipelineConfig::new(commentators, critic);
        cfg.fusion = fusion;
        cfg.mode = mode;
        cfg.temperature = self.pipeline.temperature;
        cfg.max_tokens = self.pipeline.max_tokens;
        cfg.parallel = self.pipeline.parallel;
        cfg.majority_fallback = self.pipeline.fallback;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[pipeline]
mode = "msc"
workers = 2

[retrieval]
k1 = 1.5

[backends.local]
kind = "http"
endpoint = "http://127.0.0.1:9/v1"
requests_per_second = 2.5

[backends.mock]
kind = "mock"
script = "script.jsonl"

[agents.refactoring]
backend = "local"
model = "refactoring-lora"

[agents.bugfix]
backend = "local"
model = "bugfix-lora"

[agents.testing]
backend = "local"
model = "testing-lora"

[agents.logging]
backend = "local"
model = "logging-lora"

[agents.documentation]
backend = "local"
model = "documentation-lora"

[agents.critic]
backend = "mock"
model = "critic-lora"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = AppConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.pipeline.mode, ReviewMode::Msc);
        assert_eq!(cfg.pipeline.workers, 2);
        assert_eq!(cfg.pipeline.max_tokens, 512);
        assert_eq!(cfg.retrieval.k1, 1.5);
        assert_eq!(cfg.retrieval.b, 0.75);
        assert_eq!(cfg.retry, RetryPolicy::default());
        assert_eq!(cfg.agents.commentator(IssueCategory::Logging).model, "logging-lora");
    }

    #[test]
    fn round_trips_losslessly() {
        let cfg = AppConfig::from_toml(SAMPLE).unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(AppConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(AppConfig::from_toml(&text).unwrap().to_toml().unwrap(), text);
    }

    #[test]
    fn rejects_dangling_backend() {
        let bad = SAMPLE.replace("backend = \"mock\"", "backend = \"missing\"");
        assert!(matches!(AppConfig::from_toml(&bad), Err(ConfigError::UnknownBackend { .. })));
    }

    #[test]
    fn rejects_unknown_mode() {
        let bad = SAMPLE.replace("mode = \"msc\"", "mode = \"turbo\"");
        assert!(matches!(AppConfig::from_toml(&bad), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn sfa_needs_fusion() {
        let bad = SAMPLE.replace("mode = \"msc\"", "mode = \"sfa\"");
        assert!(matches!(AppConfig::from_toml(&bad), Err(ConfigError::MissingFusion)));
        let cfg = AppConfig::from_toml(SAMPLE).unwrap();
        assert!(matches!(cfg.build_pipeline(Some(ReviewMode::Sfa)), Err(ConfigError::MissingFusion)));
    }

    #[test]
    fn missing_mock_script_is_a_backend_error() {
        let cfg = AppConfig::from_toml(SAMPLE).unwrap();
        assert!(matches!(cfg.build_pipeline(None), Err(ConfigError::Backend { .. })));
    }
}
