use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, GenerationParams, LanguageModel, Usage};

/// Condition on the prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Always,
    /// Substring anywhere in the prompt.
    Contains { text: String },
    /// The last line starting with `prefix` exists and contains `text`.
    LineContains { prefix: String, text: String },
    /// Some line starts with `prefix`.
    HasLine { prefix: String },
    All { of: Vec<Predicate> },
    Any { of: Vec<Predicate> },
    Not { of: Box<Predicate> },
}

impl Predicate {
    pub fn contains(text: impl Into<String>) -> Self {
        Predicate::Contains { text: text.into() }
    }

    /// The input aspects line (last `ASPECTS:` line) contains `text`.
    pub fn aspects_line_contains(text: impl Into<String>) -> Self {
        Predicate::LineContains {
            prefix: "ASPECTS:".into(),
            text: text.into(),
        }
    }

    /// The input line (last `ARTICLE:` line) contains `text`.
    pub fn input_contains(text: impl Into<String>) -> Self {
        Predicate::LineContains {
            prefix: "ARTICLE:".into(),
            text: text.into(),
        }
    }

    pub fn has_aspects_line() -> Self {
        Predicate::HasLine {
            prefix: "ASPECTS:".into(),
        }
    }

    pub fn eval(&self, prompt: &str) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::Contains { text } => prompt.contains(text.as_str()),
            Predicate::LineContains { prefix, text } => {
                last_line(prompt, prefix).is_some_and(|l| l.contains(text.as_str()))
            }
            Predicate::HasLine { prefix } => last_line(prompt, prefix).is_some(),
            Predicate::All { of } => of.iter().all(|p| p.eval(prompt)),
            Predicate::Any { of } => of.iter().any(|p| p.eval(prompt)),
            Predicate::Not { of } => !of.eval(prompt),
        }
    }
}

fn last_line<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().rev().find(|l| l.starts_with(prefix))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CompletionScript {
    Fixed(String),
    /// Copies the body of the last line starting with `echo_line` (prefix
    /// removed), followed by `suffix`. Does not fire when no such line
    /// exists.
    Echo {
        echo_line: String,
        #[serde(default)]
        suffix: String,
    },
}

impl CompletionScript {
    fn produce(&self, prompt: &str) -> Option<String> {
        match self {
            CompletionScript::Fixed(s) => Some(s.clone()),
            CompletionScript::Echo { echo_line, suffix } => {
                let line = last_line(prompt, echo_line)?;
                let body = line[echo_line.len()..].trim();
                Some(format!("{body}{suffix}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub when: Predicate,
    /// Completion produced when this is the first matching rule that has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<CompletionScript>,
    /// Added to the target log-probability whenever the rule matches.
    #[serde(default)]
    pub weight: f64,
}

/// Deterministic rule-driven backend.
///
/// Completion text comes from the first matching rule carrying a
/// completion, else `default_completion`. Target log-probabilities are
/// `base_logprob` plus the weights of all matching rules plus optional
/// noise drawn from a hash of `(prompt, seed)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedBackend {
    pub name: Option<String>,
    pub rules: Vec<ScriptRule>,
    pub default_completion: String,
    /// `None` disables target scoring.
    pub base_logprob: Option<f64>,
    pub noise: f64,
    pub seed: u64,
    /// Prompts matching any of these fail as if the transport were down.
    pub fail_when: Vec<Predicate>,
}

impl ScriptedBackend {
    pub fn new(default_completion: impl Into<String>) -> Self {
        Self {
            default_completion: default_completion.into(),
            ..Self::default()
        }
    }

    pub fn with_rule(mut self, when: Predicate, completion: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            when,
            completion: Some(CompletionScript::Fixed(completion.into())),
            weight: 0.0,
        });
        self
    }

    pub fn with_echo(mut self, when: Predicate, echo_line: &str, suffix: &str) -> Self {
        self.rules.push(ScriptRule {
            when,
            completion: Some(CompletionScript::Echo {
                echo_line: echo_line.into(),
                suffix: suffix.into(),
            }),
            weight: 0.0,
        });
        self
    }

    pub fn with_weight(mut self, when: Predicate, weight: f64) -> Self {
        self.rules.push(ScriptRule {
            when,
            completion: None,
            weight,
        });
        self
    }

    pub fn with_target_scoring(mut self, base_logprob: f64) -> Self {
        self.base_logprob = Some(base_logprob);
        self
    }

    pub fn with_noise(mut self, amplitude: f64, seed: u64) -> Self {
        self.noise = amplitude;
        self.seed = seed;
        self
    }

    pub fn failing_when(mut self, when: Predicate) -> Self {
        self.fail_when.push(when);
        self
    }

    pub fn completion_text(&self, prompt: &str) -> String {
        self.rules
            .iter()
            .filter(|r| r.when.eval(prompt))
            .find_map(|r| r.completion.as_ref().and_then(|c| c.produce(prompt)))
            .unwrap_or_else(|| self.default_completion.clone())
    }

    pub fn game_value(&self, prompt: &str) -> Option<f64> {
        let base = self.base_logprob?;
        let additive: f64 = self
            .rules
            .iter()
            .filter(|r| r.when.eval(prompt))
            .map(|r| r.weight)
            .sum();
        let noise = if self.noise != 0.0 {
            self.noise * unit_noise(prompt, self.seed)
        } else {
            0.0
        };
        Some(base + additive + noise)
    }
}

/// Uniform value in [-1, 1) from FNV-1a over the prompt, mixed with the seed.
fn unit_noise(prompt: &str, seed: u64) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in prompt.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

impl LanguageModel for ScriptedBackend {
    fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "scripted".to_string())
    }

    fn supports_target_scoring(&self) -> bool {
        self.base_logprob.is_some()
    }

    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        target: Option<&str>,
    ) -> Result<Completion, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        params.validate()?;
        if self.fail_when.iter().any(|p| p.eval(prompt)) {
            return Err(BackendError::Unavailable {
                attempts: 1,
                message: "scripted transport failure".into(),
            });
        }
        let target_logprob = match target {
            None => None,
            Some(_) => Some(self.game_value(prompt).ok_or_else(|| {
                BackendError::Capability("scripted backend has no base log-probability".into())
            })?),
        };
        let text = self.completion_text(prompt);
        Ok(Completion {
            usage: Usage {
                prompt_tokens: prompt.split_whitespace().count() as u64,
                completion_tokens: text.split_whitespace().count() as u64,
            },
            text,
            target_logprob,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WITH: &str = "What is the relevance SCORE for the following ARTICLE?\n\nARTICLE: Mascom announces new price increases in 2024\n\nASPECTS: Competitor (), TSP (Mascom), Product ()\n";
    const WITHOUT: &str = "What is the relevance SCORE for the following ARTICLE?\n\nARTICLE: Mascom announces new price increases in 2024\n\nASPECTS: Competitor (), TSP (), Product ()\n";

    #[test]
    fn scripted_echo_rule() {
        let b = ScriptedBackend::new("{\"score\": 1}")
            .with_rule(Predicate::contains("TSP (Mascom)"), "{\"score\": 2}");
        let p = GenerationParams::default();
        assert_eq!(b.complete(WITH, &p, None).unwrap().text, "{\"score\": 2}");
        assert_eq!(b.complete(WITHOUT, &p, None).unwrap().text, "{\"score\": 1}");
    }

    #[test]
    fn additive_target_scoring() {
        let b = ScriptedBackend::new("{\"score\": 2}")
            .with_target_scoring(-3.0)
            .with_weight(Predicate::aspects_line_contains("TSP (Mascom)"), 1.0);
        let p = GenerationParams::default();
        let c = b.complete(WITH, &p, Some("{\"score\": 2}")).unwrap();
        assert_eq!(c.target_logprob, Some(-2.0));
        assert_eq!(c.text, "{\"score\": 2}");
        let c0 = b.complete(WITHOUT, &p, Some("{\"score\": 2}")).unwrap();
        assert_eq!(c0.target_logprob, Some(-3.0));
    }

    #[test]
    fn capability_error_without_base() {
        let b = ScriptedBackend::new("x");
        assert!(!b.supports_target_scoring());
        assert!(matches!(
            b.complete(WITH, &GenerationParams::default(), Some("t")),
            Err(BackendError::Capability(_))
        ));
    }

    #[test]
    fn echo_copies_aspect_line() {
        let b = ScriptedBackend::new("{\"score\": 1}").with_echo(
            Predicate::has_aspects_line(),
            "ASPECTS:",
            "\n{\"score\": 2}",
        );
        let c = b.complete(WITH, &GenerationParams::default(), None).unwrap();
        assert_eq!(c.text, "Competitor (), TSP (Mascom), Product ()\n{\"score\": 2}");
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let b = ScriptedBackend::new("x").with_target_scoring(0.0).with_noise(0.5, 11);
        let a = b.game_value(WITH).unwrap();
        assert_eq!(a, b.game_value(WITH).unwrap());
        assert!(a.abs() <= 0.5);
        let other = ScriptedBackend::new("x").with_target_scoring(0.0).with_noise(0.5, 12);
        assert_ne!(a, other.game_value(WITH).unwrap());
    }

    #[test]
    fn serde_round_trip() {
        let b = ScriptedBackend::new("{\"score\": 1}")
            .with_rule(
                Predicate::All {
                    of: vec![Predicate::input_contains("Mascom"), Predicate::has_aspects_line()],
                },
                "{\"score\": 2}",
            )
            .with_target_scoring(-1.0);
        let json = serde_json::to_string(&b).unwrap();
        let back: ScriptedBackend = serde_json::from_str(&json).unwrap();
        assert_eq!(b, back);
    }
}
