use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::sampling::SamplingStrategy;
use super::task::{MetricName, TaskKind};
use crate::backend::GenerationParams;
use crate::prompt::PromptMode;

pub const METRICS_FORMAT: &str = "metrics-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: SeedStatus,
    pub n_train: usize,
    pub n_test: usize,
    pub demo_ids: Vec<String>,
    pub parse_failures: usize,
    pub metrics: BTreeMap<MetricName, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub task: TaskKind,
    pub backend: String,
    pub mode: PromptMode,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub holdout_fraction: f64,
    pub sampling: SamplingStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment_thresholds: Option<(f64, f64)>,
    pub params: GenerationParams,
    pub n_items: usize,
    pub metrics: BTreeMap<MetricName, MetricSummary>,
    pub parse_failure_rate: f64,
    pub partial: bool,
    pub seed_outcomes: Vec<SeedOutcome>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Formatted cells of one table row, keyed by (task, metric).
type Cells = BTreeMap<(String, MetricName), String>;

/// Side-by-side comparison in the layout of a results table: one row per
/// prompting method and shot count, one column per task metric, cells
/// formatted as `mean ± std`.
pub fn format_metrics_table(reports: &[MetricsReport]) -> String {
    let mut columns: BTreeSet<(String, MetricName)> = BTreeSet::new();
    for r in reports {
        for m in r.metrics.keys() {
            columns.insert((r.task.to_string(), *m));
        }
    }
    let columns: Vec<_> = columns.into_iter().collect();
    let mut rows: Vec<(String, Cells)> = Vec::new();
    for r in reports {
        let label = format!("{} ({}-shot)", r.mode, r.k);
        let idx = match rows.iter().position(|(l, _)| *l == label) {
            Some(i) => i,
            None => {
                rows.push((label, BTreeMap::new()));
                rows.len() - 1
            }
        };
        for (m, s) in &r.metrics {
            let mut cell = format!("{:.4} ± {:.4}", s.mean, s.std);
            if r.partial {
                cell.push('*');
            }
            rows[idx].1.insert((r.task.to_string(), *m), cell);
        }
    }

    let headers: Vec<String> = std::iter::once("method".to_string())
        .chain(columns.iter().map(|(t, m)| format!("{t} {m}")))
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, cells)| {
            std::iter::once(label.clone())
                .chain(columns.iter().map(|c| cells.get(c).cloned().unwrap_or_else(|| "-".into())))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..headers.len())
        .map(|i| {
            body.iter()
                .map(|r| r[i].chars().count())
                .chain(std::iter::once(headers[i].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", line(&headers));
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ")
    );
    for r in &body {
        let _ = writeln!(out, "{}", line(r));
    }
    if reports.iter().any(|r| r.partial) {
        out.push_str("* partial run: some seeds were excluded\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mode: PromptMode, mean: f64) -> MetricsReport {
        MetricsReport {
            format: METRICS_FORMAT.into(),
            task: TaskKind::Relevance,
            backend: "scripted".into(),
            mode,
            k: 5,
            seeds: vec![0, 1],
            holdout_fraction: 0.1,
            sampling: SamplingStrategy::Stratified,
            sentiment_thresholds: None,
            params: GenerationParams::default(),
            n_items: 10,
            metrics: [(
                MetricName::Accuracy,
                MetricSummary {
                    per_seed: vec![mean, mean],
                    mean,
                    std: 0.0,
                },
            )]
            .into_iter()
            .collect(),
            parse_failure_rate: 0.0,
            partial: false,
            seed_outcomes: vec![],
            notes: vec![],
        }
    }

    #[test]
    fn table_has_one_row_per_method() {
        let t = format_metrics_table(&[report(PromptMode::Vanilla, 0.5), report(PromptMode::Mac, 0.9)]);
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("method"));
        assert!(lines[2].contains("vanilla (5-shot)") && lines[2].contains("0.5000 ± 0.0000"));
        assert!(lines[3].contains("mac (5-shot)") && lines[3].contains("0.9000"));
    }

    #[test]
    fn json_round_trip() {
        let r = report(PromptMode::Mac, 0.25);
        assert_eq!(MetricsReport::from_json(&r.to_json()).unwrap(), r);
    }
}
