//! Few-shot evaluation: datasets, holdout splits, demo sampling, metrics.

mod dataset;
mod kappa;
mod metrics;
mod report;
mod run;
mod sampling;
mod task;

pub use dataset::{discretize_sentiment, load_dataset, parse_dataset, DatasetError, LabeledItem, Sentiment};
pub use kappa::{fleiss_kappa, KappaError};
pub use metrics::{classification_scores, compute_metrics, gold_classes, ClassificationScores, MetricError};
pub use report::{format_metrics_table, MetricSummary, MetricsReport, SeedOutcome, SeedStatus, METRICS_FORMAT};
pub use run::{
    item_bindings, item_prompt_text, make_demonstration, run_eval, EvalError, EvalRun, EvalSettings, EvalTrial,
};
pub use sampling::{holdout_size, largest_remainder, select_few_shot, split_holdout, SamplingStrategy};
pub use task::{MetricName, TaskKind, TaskSpec, DEFAULT_SENTIMENT_THRESHOLDS, SENTIMENT_LABELS};
