//! Run configuration shared by the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{ParseFailurePolicy, Scoring};
use crate::backend::{
    audit_path, BackendError, GenerationParams, HttpBackend, HttpBackendConfig, LanguageModel, ScriptedBackend,
};
use crate::eval::{SamplingStrategy, TaskSpec};
use crate::memorization::MentionRule;
use crate::prompt::PromptMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Deterministic rule-driven backend, inline or from a JSON file.
    Scripted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<ScriptedBackend>,
    },
    /// OpenAI-compatible HTTP endpoint. The API key is read from the
    /// environment variable named by `api_key_env`.
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub modes: Vec<PromptMode>,
    pub k: Vec<usize>,
    /// Number of seeds, counted up from the global seed.
    pub seeds: usize,
    pub holdout_fraction: f64,
    pub sampling: SamplingStrategy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            modes: vec![PromptMode::Vanilla, PromptMode::Mac],
            k: vec![5, 10],
            seeds: 5,
            holdout_fraction: 0.1,
            sampling: SamplingStrategy::Stratified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemorizationOptions {
    pub slot: String,
    pub mention_rule: MentionRule,
    pub include_demo_entities: bool,
}

impl Default for MemorizationOptions {
    fn default() -> Self {
        Self {
            slot: "TSP".into(),
            mention_rule: MentionRule::Anywhere,
            include_demo_entities: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionOptions {
    pub permutations: usize,
    pub exact: bool,
    /// Defaults to target log-probability when the backend supports it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scoring: Option<Scoring>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub on_parse_failure: ParseFailurePolicy,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        Self {
            permutations: 200,
            exact: false,
            scoring: None,
            target: None,
            on_parse_failure: ParseFailurePolicy::default(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Decoding parameters; for HTTP backends this overrides the backend's
    /// own `params`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GenerationParams>,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub memorization: MemorizationOptions,
    #[serde(default)]
    pub attribution: AttributionOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::Scripted {
                path: None,
                script: None,
            },
            template: None,
            kb: None,
            dataset: None,
            entities: None,
            task: None,
            output_dir: default_output_dir(),
            seed: 0,
            parallelism: default_parallelism(),
            params: None,
            eval: EvalOptions::default(),
            memorization: MemorizationOptions::default(),
            attribution: AttributionOptions::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn parse(json: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(json).map_err(|source| ConfigError::Json {
            path: origin.to_string(),
            source,
        })
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.template);
        resolve(base, &mut self.kb);
        resolve(base, &mut self.dataset);
        resolve(base, &mut self.entities);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let BackendConfig::Scripted { path, .. } = &mut self.backend {
            resolve(base, path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        if let Some(p) = &self.params {
            p.validate()?;
        }
        if let BackendConfig::Scripted { path, script } = &self.backend {
            if path.is_some() == script.is_some() {
                return Err(ConfigError::Invalid(
                    "scripted backend needs exactly one of `path` or `script`".into(),
                ));
            }
        }
        if let Some(t) = &self.task {
            t.validate().map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }

    /// Effective decoding parameters.
    pub fn params(&self) -> GenerationParams {
        match (&self.params, &self.backend) {
            (Some(p), _) => *p,
            (None, BackendConfig::Http(h)) => h.params,
            (None, _) => GenerationParams::default(),
        }
    }

    /// Instantiates the backend. HTTP backends log every request to the
    /// run directory's audit file when `run_dir` is given.
    pub fn build_backend(&self, run_dir: Option<&Path>) -> Result<Arc<dyn LanguageModel>, ConfigError> {
        match &self.backend {
            BackendConfig::Scripted { script: Some(s), .. } => Ok(Arc::new(s.clone())),
            BackendConfig::Scripted { path: Some(p), .. } => Ok(Arc::new(load_script(p)?)),
            BackendConfig::Scripted { .. } => Err(ConfigError::Invalid(
                "scripted backend needs `path` or `script`".into(),
            )),
            BackendConfig::Http(h) => {
                let mut h = h.clone();
                h.params = self.params();
                h.parallelism = h.parallelism.min(self.parallelism).max(1);
                let mut backend = HttpBackend::new(h)?;
                if let Some(dir) = run_dir {
                    let path = audit_path(dir);
                    backend = backend.with_audit_log(&path).map_err(|source| ConfigError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                }
                Ok(Arc::new(backend))
            }
        }
    }

    /// Pretty JSON snapshot written into each run directory.
    pub fn snapshot(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

pub fn load_script(path: &Path) -> Result<ScriptedBackend, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse(
            r#"{"backend": {"kind": "scripted", "script": {"default_completion": "{\"score\": 1}"}}}"#,
            "inline",
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.eval.k, vec![5, 10]);
        assert_eq!(cfg.eval.seeds, 5);
        assert_eq!(cfg.params(), GenerationParams::default());
        let backend = cfg.build_backend(None).unwrap();
        assert_eq!(backend.name(), "scripted");
    }

    #[test]
    fn http_config_parses_with_defaults() {
        let cfg = RunConfig::parse(
            r#"{"backend": {"kind": "http", "base_url": "http://127.0.0.1:9/v1", "model": "m"}}"#,
            "inline",
        )
        .unwrap();
        match &cfg.backend {
            BackendConfig::Http(h) => {
                assert_eq!(h.model, "m");
                assert_eq!(h.max_attempts, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg = RunConfig {
            template: Some("t.json".into()),
            ..Default::default()
        };
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.template.unwrap(), PathBuf::from("/cfg/t.json"));
        assert_eq!(cfg.output_dir, PathBuf::from("/cfg/runs"));
    }

    #[test]
    fn rejects_ambiguous_script() {
        let cfg = RunConfig::parse(r#"{"backend": {"kind": "scripted"}}"#, "inline").unwrap();
        assert!(cfg.validate().is_err());
        assert!(RunConfig::parse(r#"{"backend": {"kind": "scripted"}, "bogus": 1}"#, "inline").is_err());
    }
}
