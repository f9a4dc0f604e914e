use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::task::{TaskKind, TaskSpec};
use crate::bindings::AspectBindings;
use crate::prompt::Label;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid task: {0}")]
    Task(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub id: String,
    pub text: String,
    pub gold_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bindings: Option<AspectBindings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    /// Hand-written reasoning used when the item serves as a
    /// chain-of-thought demonstration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: serde_json::Value,
    text: String,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    bindings: Option<AspectBindings>,
    #[serde(default)]
    choices: Option<Vec<String>>,
    #[serde(default)]
    reasoning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

/// Maps a sentiment score in `[-1, 1]` onto three classes, with a closed
/// neutral interval `[lo, hi]`.
pub fn discretize_sentiment(score: f64, thresholds: (f64, f64)) -> Result<Sentiment, String> {
    let (lo, hi) = thresholds;
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(format!("thresholds ({lo}, {hi}) must satisfy lo < hi"));
    }
    if !(-1.0..=1.0).contains(&score) {
        return Err(format!("sentiment score {score} outside [-1, 1]"));
    }
    Ok(if score < lo {
        Sentiment::Negative
    } else if score > hi {
        Sentiment::Positive
    } else {
        Sentiment::Neutral
    })
}

fn row_to_item(row: Row, task: &TaskSpec) -> Result<LabeledItem, String> {
    let id = match row.id {
        serde_json::Value::String(s) => s,
        serde_json::Value::Number(n) => n.to_string(),
        other => return Err(format!("id must be a string or number, got {other}")),
    };
    if id.is_empty() {
        return Err("id is empty".into());
    }
    if row.text.trim().is_empty() {
        return Err(format!("item {id}: text is empty"));
    }
    let gold = match (task.kind, row.label, row.score) {
        (TaskKind::Sentiment, None, Some(score)) => {
            Label::Text(discretize_sentiment(score, task.sentiment_thresholds)?.as_str().to_string())
        }
        (_, Some(label), None) => label,
        (_, Some(_), Some(_)) => return Err(format!("item {id}: give either label or score, not both")),
        (TaskKind::Sentiment, None, None) => return Err(format!("item {id}: missing label or score")),
        (_, None, _) => return Err(format!("item {id}: missing label")),
    };
    let gold = match (task.kind, gold) {
        (TaskKind::Sentiment, Label::Text(s)) => Label::Text(s.to_lowercase()),
        (_, g) => g,
    };
    if !task.scale().contains(&gold) {
        return Err(format!("item {id}: label {gold} is not in the {} label set", task.kind));
    }
    if task.kind == TaskKind::MultipleChoice {
        let choices = row
            .choices
            .as_ref()
            .ok_or_else(|| format!("item {id}: multiple-choice items need choices"))?;
        if choices.len() < 2 || choices.len() > task.n_choices {
            return Err(format!(
                "item {id}: {} choices, expected 2..={}",
                choices.len(),
                task.n_choices
            ));
        }
        match gold {
            Label::Int(g) if (g as usize) < choices.len() => {}
            _ => {
                return Err(format!(
                    "item {id}: gold index {gold} out of range for {} choices",
                    choices.len()
                ))
            }
        }
    }
    Ok(LabeledItem {
        id,
        text: row.text,
        gold_label: gold,
        bindings: row.bindings,
        choices: row.choices,
        reasoning: row.reasoning.filter(|r| !r.trim().is_empty()),
    })
}

/// Parses JSONL dataset text, validating every row against `task`.
pub fn parse_dataset(text: &str, task: &TaskSpec) -> Result<Vec<LabeledItem>, DatasetError> {
    task.validate().map_err(DatasetError::Task)?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Line {
            line: line_no,
            message,
        };
        let row: Row = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let item = row_to_item(row, task).map_err(err)?;
        if !seen.insert(item.id.clone()) {
            return Err(err(format!("duplicate id `{}`", item.id)));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: &Path, task: &TaskSpec) -> Result<Vec<LabeledItem>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, task)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_minimal_relevance_fixture() {
        let text = r#"{"id": "a", "text": "one", "label": 1}
{"id": "b", "text": "two", "label": 2}
{"id": "c", "text": "three", "label": 3}
{"id": "d", "text": "four", "label": 4}
"#;
        let items = parse_dataset(text, &TaskSpec::relevance()).unwrap();
        assert_eq!(items.len(), 4);
        assert_eq!(items[3].gold_label, Label::Int(4));
    }

    #[test]
    fn rejects_out_of_range_label() {
        let text = "{\"id\": \"a\", \"text\": \"x\", \"label\": 1}\n{\"id\": \"b\", \"text\": \"y\", \"label\": 5}\n";
        match parse_dataset(text, &TaskSpec::relevance()) {
            Err(DatasetError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_choice_index() {
        let text = r#"{"id": "q", "text": "Which?", "label": 2, "choices": ["a", "b"]}"#;
        assert!(matches!(
            parse_dataset(text, &TaskSpec::multiple_choice(5)),
            Err(DatasetError::Line { line: 1, .. })
        ));
        let ok = r#"{"id": "q", "text": "Which?", "label": 1, "choices": ["a", "b"]}"#;
        assert_eq!(parse_dataset(ok, &TaskSpec::multiple_choice(5)).unwrap().len(), 1);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = "{\"id\": 1, \"text\": \"x\", \"label\": 1}\n{\"id\": \"1\", \"text\": \"y\", \"label\": 2}\n";
        assert!(matches!(
            parse_dataset(text, &TaskSpec::relevance()),
            Err(DatasetError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn sentiment_scores_are_discretized() {
        let text = "{\"id\": \"a\", \"text\": \"x\", \"score\": -0.5}\n{\"id\": \"b\", \"text\": \"y\", \"label\": \"Positive\"}\n";
        let items = parse_dataset(text, &TaskSpec::sentiment((-0.1, 0.1))).unwrap();
        assert_eq!(items[0].gold_label, Label::Text("negative".into()));
        assert_eq!(items[1].gold_label, Label::Text("positive".into()));
    }

    #[test]
    fn discretization_cases() {
        let t = (-0.1, 0.1);
        assert_eq!(discretize_sentiment(0.0, t), Ok(Sentiment::Neutral));
        assert_eq!(discretize_sentiment(-0.5, t), Ok(Sentiment::Negative));
        assert!(discretize_sentiment(1.5, t).is_err());
        assert!(discretize_sentiment(0.0, (0.1, -0.1)).is_err());
    }

    #[test]
    fn discretization_boundaries_follow_closed_neutral_interval() {
        // Enumerate the boundary neighbourhood and compare with the rule
        // written out independently: neutral iff lo <= s <= hi.
        let (lo, hi) = (-0.1f64, 0.1f64);
        let probes = [
            -1.0,
            lo - 1e-9,
            lo,
            lo + 1e-9,
            0.0,
            hi - 1e-9,
            hi,
            hi + 1e-9,
            1.0,
        ];
        for s in probes {
            let expected = if s >= lo && s <= hi {
                Sentiment::Neutral
            } else if s < lo {
                Sentiment::Negative
            } else {
                Sentiment::Positive
            };
            assert_eq!(discretize_sentiment(s, (lo, hi)), Ok(expected), "{s}");
        }
        assert_eq!(discretize_sentiment(0.1, (lo, hi)), Ok(Sentiment::Neutral));
    }
}
