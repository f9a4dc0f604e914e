use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::task::{MetricName, TaskSpec};
use crate::prompt::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no items to score")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl ClassificationScores {
    pub fn get(&self, metric: MetricName) -> f64 {
        match metric {
            MetricName::Accuracy => self.accuracy,
            MetricName::MacroF1 => self.macro_f1,
            MetricName::WeightedF1 => self.weighted_f1,
        }
    }
}

/// Accuracy plus macro and support-weighted F1.
///
/// `None` predictions (unparseable answers) count as wrong: they add a
/// false negative for the gold class and no false positive anywhere.
/// F1 averages run over the classes present in `golds`.
pub fn classification_scores<L: Ord + Clone>(
    preds: &[Option<L>],
    golds: &[L],
) -> Result<ClassificationScores, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = golds.len() as f64;
    let mut tp: BTreeMap<&L, usize> = BTreeMap::new();
    let mut pred_count: BTreeMap<&L, usize> = BTreeMap::new();
    let mut support: BTreeMap<&L, usize> = BTreeMap::new();
    let mut correct = 0usize;
    for (p, g) in preds.iter().zip(golds) {
        *support.entry(g).or_default() += 1;
        if let Some(p) = p {
            *pred_count.entry(p).or_default() += 1;
            if p == g {
                correct += 1;
                *tp.entry(g).or_default() += 1;
            }
        }
    }
    let mut macro_sum = 0.0;
    let mut weighted_sum = 0.0;
    for (class, &sup) in &support {
        let t = tp.get(class).copied().unwrap_or(0) as f64;
        let predicted = pred_count.get(class).copied().unwrap_or(0) as f64;
        // F1 = 2TP / (2TP + FP + FN) = 2TP / (predicted + support)
        let denom = predicted + sup as f64;
        let f1 = if denom > 0.0 { 2.0 * t / denom } else { 0.0 };
        macro_sum += f1;
        weighted_sum += f1 * sup as f64;
    }
    Ok(ClassificationScores {
        accuracy: correct as f64 / n,
        macro_f1: macro_sum / support.len() as f64,
        weighted_f1: weighted_sum / n,
    })
}

/// The task's metric set evaluated on `preds` against `golds`.
pub fn compute_metrics(
    preds: &[Label],
    golds: &[Label],
    task: &TaskSpec,
) -> Result<BTreeMap<MetricName, f64>, MetricError> {
    let wrapped: Vec<Option<Label>> = preds.iter().cloned().map(Some).collect();
    let scores = classification_scores(&wrapped, golds)?;
    Ok(task.metrics().iter().map(|&m| (m, scores.get(m))).collect())
}

/// Classes that appear in `golds`, for reporting.
pub fn gold_classes<L: Ord + Clone>(golds: &[L]) -> BTreeSet<L> {
    golds.iter().cloned().collect()
}
