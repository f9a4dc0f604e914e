//! Language-model completion backends.
//!
//! [`LanguageModel`] is the single seam between the protocols in this crate
//! and a model. [`ScriptedBackend`] answers from declarative rules and is
//! used for tests and oracle runs; [`HttpBackend`] talks to any
//! OpenAI-compatible endpoint.

mod http;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{
    audit_path, AuditLog, Decoding, HttpBackend, HttpBackendConfig, TargetScoring, DEFAULT_API_KEY_ENV,
};
pub use scripted::{CompletionScript, Predicate, ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("credential rejected: {0}")]
    Credential(String),
    #[error("backend cannot score target continuations: {0}")]
    Capability(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected backend response: {0}")]
    Protocol(String),
}

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub top_k: u32,
    pub max_new_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.3,
            top_p: 0.95,
            repetition_penalty: 1.2,
            top_k: 50,
            max_new_tokens: 400,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be a finite value >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if !self.repetition_penalty.is_finite() || self.repetition_penalty <= 0.0 {
            return bad("repetition_penalty must be > 0");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Summed log-probability of the requested target continuation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_logprob: Option<f64>,
    #[serde(default)]
    pub usage: Usage,
}

pub trait LanguageModel: Send + Sync {
    /// Short identifier recorded in run metadata.
    fn name(&self) -> String;

    /// Whether `complete` can fill [`Completion::target_logprob`].
    fn supports_target_scoring(&self) -> bool;

    /// Generates a completion for `prompt`. When `target` is given, the
    /// backend additionally scores it as the continuation of `prompt`, or
    /// fails with [`BackendError::Capability`].
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        target: Option<&str>,
    ) -> Result<Completion, BackendError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn supports_target_scoring(&self) -> bool {
        (**self).supports_target_scoring()
    }
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        target: Option<&str>,
    ) -> Result<Completion, BackendError> {
        (**self).complete(prompt, params, target)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn name(&self) -> String {
        (**self).name()
    }
    fn supports_target_scoring(&self) -> bool {
        (**self).supports_target_scoring()
    }
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        target: Option<&str>,
    ) -> Result<Completion, BackendError> {
        (**self).complete(prompt, params, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_settings() {
        let p = GenerationParams::default();
        assert_eq!(p.temperature, 0.3);
        assert_eq!(p.top_p, 0.95);
        assert_eq!(p.repetition_penalty, 1.2);
        assert_eq!(p.top_k, 50);
        assert_eq!(p.max_new_tokens, 400);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn rejects_invalid_params() {
        let base = GenerationParams::default();
        for p in [
            GenerationParams { temperature: -0.1, ..base },
            GenerationParams { top_p: 0.0, ..base },
            GenerationParams { top_p: 1.5, ..base },
            GenerationParams { repetition_penalty: 0.0, ..base },
            GenerationParams { max_new_tokens: 0, ..base },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }
}
