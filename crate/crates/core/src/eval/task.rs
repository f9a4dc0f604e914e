use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompt::{Label, LabelScale, OutputContract};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Relevance on a 1..=4 scale, scored with macro-F1.
    #[serde(rename = "relevance_1_4")]
    Relevance,
    /// One prompt listing all options; the answer is an option index.
    MultipleChoice,
    /// negative / neutral / positive.
    #[serde(rename = "sentiment_3way")]
    Sentiment,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Relevance => "relevance_1_4",
            TaskKind::MultipleChoice => "multiple_choice",
            TaskKind::Sentiment => "sentiment_3way",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    MacroF1,
    WeightedF1,
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricName::Accuracy => "accuracy",
            MetricName::MacroF1 => "macro_f1",
            MetricName::WeightedF1 => "weighted_f1",
        })
    }
}

pub const DEFAULT_SENTIMENT_THRESHOLDS: (f64, f64) = (-0.1, 0.1);
pub const SENTIMENT_LABELS: [&str; 3] = ["negative", "neutral", "positive"];

/// Task definition. Fixes the label set and the metrics reported for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of options for multiple-choice tasks.
    #[serde(default = "default_choices")]
    pub n_choices: usize,
    /// Closed neutral interval `[lo, hi]` for sentiment scores.
    #[serde(default = "default_thresholds")]
    pub sentiment_thresholds: (f64, f64),
}

fn default_choices() -> usize {
    5
}

fn default_thresholds() -> (f64, f64) {
    DEFAULT_SENTIMENT_THRESHOLDS
}

impl TaskSpec {
    pub fn relevance() -> Self {
        Self {
            kind: TaskKind::Relevance,
            n_choices: default_choices(),
            sentiment_thresholds: DEFAULT_SENTIMENT_THRESHOLDS,
        }
    }

    pub fn multiple_choice(n_choices: usize) -> Self {
        Self {
            kind: TaskKind::MultipleChoice,
            n_choices,
            sentiment_thresholds: DEFAULT_SENTIMENT_THRESHOLDS,
        }
    }

    pub fn sentiment(thresholds: (f64, f64)) -> Self {
        Self {
            kind: TaskKind::Sentiment,
            n_choices: default_choices(),
            sentiment_thresholds: thresholds,
        }
    }

    pub fn scale(&self) -> LabelScale {
        match self.kind {
            TaskKind::Relevance => LabelScale::Range { min: 1, max: 4 },
            TaskKind::MultipleChoice => LabelScale::Range {
                min: 0,
                max: self.n_choices as i64 - 1,
            },
            TaskKind::Sentiment => LabelScale::Categorical {
                labels: SENTIMENT_LABELS.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        self.scale().labels()
    }

    pub fn contract(&self, output_key: &str) -> OutputContract {
        OutputContract {
            scale: self.scale(),
            output_key: output_key.to_string(),
        }
    }

    /// Relevance tasks are imbalanced and use macro-F1; the others use
    /// support-weighted F1.
    pub fn metrics(&self) -> [MetricName; 2] {
        match self.kind {
            TaskKind::Relevance => [MetricName::Accuracy, MetricName::MacroF1],
            TaskKind::MultipleChoice | TaskKind::Sentiment => {
                [MetricName::Accuracy, MetricName::WeightedF1]
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == TaskKind::MultipleChoice && self.n_choices < 2 {
            return Err("multiple-choice tasks need at least two options".into());
        }
        let (lo, hi) = self.sentiment_thresholds;
        if self.kind == TaskKind::Sentiment && lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(format!("sentiment thresholds ({lo}, {hi}) must satisfy lo < hi"));
        }
        Ok(())
    }
}
