use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::LabeledItem;
use super::metrics::{classification_scores, MetricError};
use super::report::{MetricSummary, MetricsReport, SeedOutcome, SeedStatus, METRICS_FORMAT};
use super::sampling::{select_few_shot, split_holdout, SamplingStrategy};
use super::task::{TaskKind, TaskSpec};
use crate::backend::{BackendError, GenerationParams, LanguageModel};
use crate::bindings::AspectBindings;
use crate::extract::KnowledgeBase;
use crate::prompt::{
    render_prompt, Demonstration, Label, OutputContract, PromptError, PromptMode, PromptTemplate,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation settings: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub mode: PromptMode,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub holdout_fraction: f64,
    pub sampling: SamplingStrategy,
    pub params: GenerationParams,
    pub parallelism: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mode: PromptMode::Mac,
            k: 5,
            seeds: (0..5).collect(),
            holdout_fraction: 0.1,
            sampling: SamplingStrategy::Stratified,
            params: GenerationParams::default(),
            parallelism: 4,
        }
    }
}

/// One prompted test item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTrial {
    pub seed: u64,
    pub item_id: String,
    pub gold: Label,
    pub prediction: Option<Label>,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend_error: Option<String>,
    pub completion: String,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: MetricsReport,
    pub trials: Vec<EvalTrial>,
}

/// Input text shown to the model; multiple-choice items list their
/// numbered options below the question.
pub fn item_prompt_text(item: &LabeledItem) -> String {
    match &item.choices {
        Some(choices) => {
            let mut s = item.text.trim_end().to_string();
            for (i, c) in choices.iter().enumerate() {
                s.push_str(&format!("\n{i}. {c}"));
            }
            s
        }
        None => item.text.clone(),
    }
}

/// Bindings for an item: its own annotations when present, otherwise the
/// knowledge-base extraction, restricted to the template's slots.
pub fn item_bindings(
    item: &LabeledItem,
    template: &PromptTemplate,
    kb: Option<&KnowledgeBase>,
    mode: PromptMode,
) -> Result<AspectBindings, EvalError> {
    match (&item.bindings, kb) {
        (Some(b), _) => Ok(template.schema.conform(b)?),
        (None, Some(kb)) => Ok(template.schema.restrict(&kb.extract(&item.text))),
        (None, None) if mode == PromptMode::Mac => Err(EvalError::InvalidArgument(format!(
            "item {} has no bindings and no knowledge base was given",
            item.id
        ))),
        (None, None) => Ok(template.schema.empty_bindings()),
    }
}

/// Demonstration built from a labelled item. The gold output is the
/// item's reasoning, when present, followed by the answer fragment.
pub fn make_demonstration(
    item: &LabeledItem,
    contract: &OutputContract,
    bindings: AspectBindings,
) -> Result<Demonstration, PromptError> {
    let fragment = contract.format(&item.gold_label);
    let gold = match &item.reasoning {
        Some(r) => format!("{} {fragment}", r.trim()),
        None => fragment,
    };
    Demonstration::new(item_prompt_text(item), bindings, gold)
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MetricSummary {
        per_seed: values.to_vec(),
        mean,
        std,
    }
}

enum ItemOutcome {
    Done(EvalTrial),
    Unavailable(EvalTrial),
}

/// Few-shot evaluation over several seeds.
///
/// Each seed draws its own holdout split and demonstrations. Unparseable
/// answers count as incorrect. If the backend becomes unavailable the seed
/// is marked partial and left out of the aggregate; other backend errors
/// abort the run.
pub fn run_eval(
    backend: &dyn LanguageModel,
    template: &PromptTemplate,
    task: &TaskSpec,
    dataset: &[LabeledItem],
    kb: Option<&KnowledgeBase>,
    settings: &EvalSettings,
) -> Result<EvalRun, EvalError> {
    task.validate().map_err(EvalError::InvalidArgument)?;
    settings.params.validate()?;
    if settings.seeds.is_empty() {
        return Err(EvalError::InvalidArgument("no seeds given".into()));
    }
    let mut template = template.clone();
    template.output_contract = task.contract(&template.output_contract.output_key);
    let contract = template.output_contract.clone();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::InvalidArgument(e.to_string()))?;

    let mut trials = Vec::new();
    let mut outcomes = Vec::new();
    let mut per_metric: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    let mut parse_failures_total = 0usize;
    let mut scored_total = 0usize;

    for &seed in &settings.seeds {
        let (train_idx, test_idx) = split_holdout(dataset.len(), settings.holdout_fraction, seed)
            .map_err(EvalError::InvalidArgument)?;
        // Chain-of-thought demos need written reasoning, so only items that
        // carry it are eligible there.
        let pool_idx: Vec<usize> = train_idx
            .into_iter()
            .filter(|&i| settings.mode != PromptMode::Cot || dataset[i].reasoning.is_some())
            .collect();
        let pool_labels: Vec<&Label> = pool_idx.iter().map(|&i| &dataset[i].gold_label).collect();
        let picked = select_few_shot(&pool_labels, settings.k, seed, settings.sampling)
            .map_err(EvalError::InvalidArgument)?;
        let demos = picked
            .iter()
            .map(|&p| {
                let item = &dataset[pool_idx[p]];
                let b = item_bindings(item, &template, kb, settings.mode)?;
                Ok(make_demonstration(item, &contract, b)?)
            })
            .collect::<Result<Vec<_>, EvalError>>()?;

        let results: Vec<Result<ItemOutcome, EvalError>> = pool.install(|| {
            test_idx
                .par_iter()
                .map(|&i| {
                    let item = &dataset[i];
                    let bindings = item_bindings(item, &template, kb, settings.mode)?;
                    let prompt = render_prompt(
                        &template,
                        &demos,
                        &item_prompt_text(item),
                        &bindings,
                        settings.mode,
                    )?;
                    let mut trial = EvalTrial {
                        seed,
                        item_id: item.id.clone(),
                        gold: item.gold_label.clone(),
                        prediction: None,
                        correct: false,
                        parse_error: None,
                        backend_error: None,
                        completion: String::new(),
                    };
                    match backend.complete(&prompt.full_text, &settings.params, None) {
                        Ok(c) => {
                            match contract.parse(&c.text) {
                                Ok(label) => {
                                    trial.correct = label == item.gold_label;
                                    trial.prediction = Some(label);
                                }
                                Err(e) => trial.parse_error = Some(e.to_string()),
                            }
                            trial.completion = c.text;
                            Ok(ItemOutcome::Done(trial))
                        }
                        Err(e @ BackendError::Unavailable { .. }) => {
                            trial.backend_error = Some(e.to_string());
                            Ok(ItemOutcome::Unavailable(trial))
                        }
                        Err(e) => Err(e.into()),
                    }
                })
                .collect()
        });

        let mut seed_trials = Vec::with_capacity(results.len());
        let mut unavailable = false;
        for r in results {
            match r? {
                ItemOutcome::Done(t) => seed_trials.push(t),
                ItemOutcome::Unavailable(t) => {
                    unavailable = true;
                    seed_trials.push(t);
                }
            }
        }
        let parse_failures = seed_trials.iter().filter(|t| t.parse_error.is_some()).count();
        let mut metrics = BTreeMap::new();
        let status = if unavailable {
            SeedStatus::Partial
        } else {
            let preds: Vec<Option<Label>> = seed_trials.iter().map(|t| t.prediction.clone()).collect();
            let golds: Vec<Label> = seed_trials.iter().map(|t| t.gold.clone()).collect();
            let scores = classification_scores(&preds, &golds)?;
            for m in task.metrics() {
                metrics.insert(m, scores.get(m));
                per_metric.entry(m).or_default().push(scores.get(m));
            }
            parse_failures_total += parse_failures;
            scored_total += seed_trials.len();
            SeedStatus::Complete
        };
        outcomes.push(SeedOutcome {
            seed,
            status,
            n_train: pool_idx.len(),
            n_test: test_idx.len(),
            demo_ids: picked.iter().map(|&p| dataset[pool_idx[p]].id.clone()).collect(),
            parse_failures,
            metrics,
        });
        trials.extend(seed_trials);
    }

    let mut notes = Vec::new();
    if task.kind == TaskKind::MultipleChoice {
        notes.push(
            "weighted_f1 treats each answer position (option index) as a class, weighted by gold support"
                .to_string(),
        );
    }
    let partial = outcomes.iter().any(|o| o.status == SeedStatus::Partial);
    if partial {
        notes.push("backend became unavailable; partial seeds are excluded from the aggregate".into());
    }
    let report = MetricsReport {
        format: METRICS_FORMAT.to_string(),
        task: task.kind,
        backend: backend.name(),
        mode: settings.mode,
        k: settings.k,
        seeds: settings.seeds.clone(),
        holdout_fraction: settings.holdout_fraction,
        sampling: settings.sampling,
        sentiment_thresholds: (task.kind == TaskKind::Sentiment).then_some(task.sentiment_thresholds),
        params: settings.params,
        n_items: dataset.len(),
        metrics: per_metric.iter().map(|(&m, v)| (m, summarize(v))).collect(),
        parse_failure_rate: if scored_total > 0 {
            parse_failures_total as f64 / scored_total as f64
        } else {
            0.0
        },
        partial,
        seed_outcomes: outcomes,
        notes,
    };
    Ok(EvalRun { report, trials })
}
