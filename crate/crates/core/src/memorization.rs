//! Memorization probe: does the model name a known entity when cued with
//! a headline about it?
//!
//! Every (entity, headline) pair is one trial. A trial counts as
//! memorized when the completion mentions the entity's name or an alias.
//! Trials are grouped into frequency bands by how often the entity occurs
//! in a reference corpus.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationParams, LanguageModel};
use crate::bindings::AspectMatch;
use crate::extract::{find_mentions, KnowledgeBase};
use crate::prompt::{render_prompt, Demonstration, PromptError, PromptMode, PromptTemplate};

pub const MEMORIZATION_FORMAT: &str = "memorization-report/1";

#[derive(Debug, Error)]
pub enum MemorizationError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid entity: {0}")]
    InvalidEntity(String),
    #[error("invalid memorization settings: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot merge reports: {0}")]
    Merge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyBand {
    /// Fewer than 10 occurrences.
    Rare,
    /// 10 to 999.
    LessFrequent,
    /// 1,000 to 9,999.
    Frequent,
    /// 10,000 or more.
    HighlyFrequent,
}

impl FrequencyBand {
    pub const ALL: [FrequencyBand; 4] = [
        FrequencyBand::Rare,
        FrequencyBand::LessFrequent,
        FrequencyBand::Frequent,
        FrequencyBand::HighlyFrequent,
    ];

    pub fn range_label(self) -> &'static str {
        match self {
            FrequencyBand::Rare => "< 10",
            FrequencyBand::LessFrequent => "10 - 999",
            FrequencyBand::Frequent => "1,000 - 9,999",
            FrequencyBand::HighlyFrequent => ">= 10,000",
        }
    }
}

impl fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrequencyBand::Rare => "rare",
            FrequencyBand::LessFrequent => "less_frequent",
            FrequencyBand::Frequent => "frequent",
            FrequencyBand::HighlyFrequent => "highly_frequent",
        })
    }
}

pub fn categorize_frequency(count: u64) -> FrequencyBand {
    match count {
        0..=9 => FrequencyBand::Rare,
        10..=999 => FrequencyBand::LessFrequent,
        1_000..=9_999 => FrequencyBand::Frequent,
        _ => FrequencyBand::HighlyFrequent,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub frequency_count: u64,
    pub headlines: Vec<String>,
}

impl EntityRecord {
    pub fn band(&self) -> FrequencyBand {
        categorize_frequency(self.frequency_count)
    }

    /// Name followed by aliases.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("entity name is empty".into());
        }
        if let Some(a) = self.aliases.iter().find(|a| a.trim().is_empty()) {
            return Err(format!("{}: empty alias {a:?}", self.name));
        }
        if self.headlines.is_empty() {
            return Err(format!("{}: no headlines", self.name));
        }
        for (i, h) in self.headlines.iter().enumerate() {
            if !self.surfaces().any(|s| !find_mentions(h, s).is_empty()) {
                return Err(format!(
                    "{}: headline {i} does not mention the entity: {h:?}",
                    self.name
                ));
            }
        }
        Ok(())
    }
}

/// Parses entity JSONL, one record per line.
pub fn parse_entities(text: &str) -> Result<Vec<EntityRecord>, MemorizationError> {
    let mut out: Vec<EntityRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| MemorizationError::Line {
            line: i + 1,
            message,
        };
        let rec: EntityRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        rec.validate().map_err(err)?;
        if out.iter().any(|o| o.name == rec.name) {
            return Err(err(format!("duplicate entity `{}`", rec.name)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_entities(path: &Path) -> Result<Vec<EntityRecord>, MemorizationError> {
    let text = fs::read_to_string(path).map_err(|source| MemorizationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_entities(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionRule {
    /// The name or an alias appears anywhere in the completion.
    #[default]
    Anywhere,
    /// The name or an alias appears on a line starting with the slot name,
    /// e.g. `TSP: Mascom`.
    SlotLine,
}

/// Word-bounded, case-insensitive check for the entity's name or aliases.
pub fn detect_mention(output: &str, entity: &EntityRecord) -> bool {
    entity.surfaces().any(|s| !find_mentions(output, s).is_empty())
}

fn detect_with_rule(output: &str, entity: &EntityRecord, rule: MentionRule, slot: &str) -> bool {
    match rule {
        MentionRule::Anywhere => detect_mention(output, entity),
        MentionRule::SlotLine => output.lines().any(|line| {
            line.trim_start()
                .strip_prefix(slot)
                .is_some_and(|rest| rest.trim_start().starts_with(':') && detect_mention(rest, entity))
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Aspect-cued prompt that names the entity in its slot.
    WithAspects,
    /// Plain prompt without an aspects line.
    WithoutAspects,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::WithAspects, Condition::WithoutAspects];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::WithAspects => "with_aspects",
            Condition::WithoutAspects => "without_aspects",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationSettings {
    /// Template slot that receives the entity in the aspect-cued condition.
    pub slot: String,
    pub params: GenerationParams,
    pub parallelism: usize,
    pub mention_rule: MentionRule,
    /// Keep entities that also appear in the demonstrations.
    pub include_demo_entities: bool,
    /// Recorded in the report for reproducibility.
    pub seed: u64,
}

impl Default for MemorizationSettings {
    fn default() -> Self {
        Self {
            slot: "TSP".into(),
            params: GenerationParams::default(),
            parallelism: 4,
            mention_rule: MentionRule::Anywhere,
            include_demo_entities: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationTrial {
    pub entity: String,
    pub band: FrequencyBand,
    pub condition: Condition,
    pub headline_index: usize,
    pub headline: String,
    /// `None` when the backend call failed.
    pub memorized: Option<bool>,
    pub completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCell {
    pub band: FrequencyBand,
    pub condition: Condition,
    pub n_trials: usize,
    pub n_memorized: usize,
    pub n_errored: usize,
    /// Memorized / scored trials; absent when nothing was scored.
    pub rate: Option<f64>,
}

impl BandCell {
    fn empty(band: FrequencyBand, condition: Condition) -> Self {
        Self {
            band,
            condition,
            n_trials: 0,
            n_memorized: 0,
            n_errored: 0,
            rate: None,
        }
    }

    fn refresh_rate(&mut self) {
        let scored = self.n_trials - self.n_errored;
        self.rate = (scored > 0).then(|| self.n_memorized as f64 / scored as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub format: String,
    pub backend: String,
    pub slot: String,
    pub mention_rule: MentionRule,
    pub k_shot: usize,
    pub seed: u64,
    pub params: GenerationParams,
    pub cells: Vec<BandCell>,
    /// Entities that also occur in the demonstrations.
    pub demo_overlap: Vec<String>,
    pub demo_entities_excluded: bool,
    pub partial: bool,
}

impl MemorizationReport {
    pub fn cell(&self, band: FrequencyBand, condition: Condition) -> Option<&BandCell> {
        self.cells.iter().find(|c| c.band == band && c.condition == condition)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// Combines reports of the same backend and settings, typically one
    /// per condition, by summing cell counts.
    pub fn merge(&self, other: &MemorizationReport) -> Result<MemorizationReport, MemorizationError> {
        if self.backend != other.backend
            || self.slot != other.slot
            || self.mention_rule != other.mention_rule
            || self.k_shot != other.k_shot
        {
            return Err(MemorizationError::Merge(
                "reports differ in backend, slot, mention rule or shot count".into(),
            ));
        }
        let mut cells: BTreeMap<(FrequencyBand, Condition), BandCell> = BTreeMap::new();
        for c in self.cells.iter().chain(&other.cells) {
            let e = cells
                .entry((c.band, c.condition))
                .or_insert_with(|| BandCell::empty(c.band, c.condition));
            e.n_trials += c.n_trials;
            e.n_memorized += c.n_memorized;
            e.n_errored += c.n_errored;
        }
        let mut overlap = self.demo_overlap.clone();
        for e in &other.demo_overlap {
            if !overlap.contains(e) {
                overlap.push(e.clone());
            }
        }
        let mut merged = self.clone();
        merged.cells = cells
            .into_values()
            .map(|mut c| {
                c.refresh_rate();
                c
            })
            .collect();
        merged.demo_overlap = overlap;
        merged.partial = self.partial || other.partial;
        Ok(merged)
    }

    /// Band-by-condition table with one row per frequency band.
    pub fn table(&self) -> String {
        let conditions: Vec<Condition> = Condition::ALL
            .into_iter()
            .filter(|cond| self.cells.iter().any(|c| c.condition == *cond))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<16} {:<14}", "band", "frequency");
        for c in &conditions {
            let _ = write!(out, " {:>22}", c.to_string());
        }
        out.push('\n');
        for band in FrequencyBand::ALL {
            let _ = write!(out, "{:<16} {:<14}", band.to_string(), band.range_label());
            for cond in &conditions {
                let cell = match self.cell(band, *cond) {
                    Some(BandCell {
                        rate: Some(r),
                        n_memorized,
                        n_trials,
                        n_errored,
                        ..
                    }) => format!("{:.3} ({}/{})", r, n_memorized, n_trials - n_errored),
                    _ => "-".to_string(),
                };
                let _ = write!(out, " {cell:>22}");
            }
            out.push('\n');
        }
        if self.partial {
            out.push_str("partial run: some trials failed and were excluded\n");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MemorizationRun {
    pub report: MemorizationReport,
    pub trials: Vec<MemorizationTrial>,
}

/// Entities named in any demonstration's text or bindings.
pub fn demo_overlap(entities: &[EntityRecord], demos: &[Demonstration]) -> Vec<String> {
    entities
        .iter()
        .filter(|e| {
            demos.iter().any(|d| {
                detect_mention(&d.item_text, e)
                    || d.bindings.iter().any(|(_, ms)| ms.iter().any(|m| detect_mention(&m.value, e)))
            })
        })
        .map(|e| e.name.clone())
        .collect()
}

/// Runs one trial per (entity, headline) under `condition`.
///
/// In the aspect-cued condition the prompt is rendered in mac mode with
/// the entity in `settings.slot` and any other slots filled from `kb`;
/// otherwise the vanilla prompt is used. Failed backend calls are recorded
/// and excluded from the rates; an unavailable backend marks the report
/// partial.
pub fn run_memorization(
    backend: &dyn LanguageModel,
    template: &PromptTemplate,
    demos: &[Demonstration],
    entities: &[EntityRecord],
    condition: Condition,
    kb: Option<&KnowledgeBase>,
    settings: &MemorizationSettings,
) -> Result<MemorizationRun, MemorizationError> {
    settings.params.validate()?;
    if !template.schema.contains(&settings.slot) {
        return Err(MemorizationError::InvalidArgument(format!(
            "template has no `{}` slot",
            settings.slot
        )));
    }
    for e in entities {
        e.validate().map_err(MemorizationError::InvalidEntity)?;
    }
    let overlap = demo_overlap(entities, demos);
    let selected: Vec<&EntityRecord> = entities
        .iter()
        .filter(|e| settings.include_demo_entities || !overlap.contains(&e.name))
        .collect();

    let jobs: Vec<(&EntityRecord, usize)> = selected
        .iter()
        .flat_map(|e| (0..e.headlines.len()).map(move |i| (*e, i)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.parallelism.max(1))
        .build()
        .map_err(|e| MemorizationError::InvalidArgument(e.to_string()))?;

    let results: Vec<Result<(MemorizationTrial, bool), MemorizationError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(entity, hi)| {
                let headline = &entity.headlines[hi];
                let (mode, bindings) = match condition {
                    Condition::WithAspects => {
                        let mut b = match kb {
                            Some(kb) => template.schema.restrict(&kb.extract(headline)),
                            None => template.schema.empty_bindings(),
                        };
                        let spans = entity
                            .surfaces()
                            .flat_map(|s| find_mentions(headline, s))
                            .min_by_key(|s| s.start);
                        let slot = b.slot_mut(&settings.slot);
                        slot.clear();
                        slot.push(match spans {
                            Some(span) => AspectMatch::new(entity.name.clone(), span),
                            None => AspectMatch::unspanned(entity.name.clone()),
                        });
                        (PromptMode::Mac, b)
                    }
                    Condition::WithoutAspects => (PromptMode::Vanilla, template.schema.empty_bindings()),
                };
                let prompt = render_prompt(template, demos, headline, &bindings, mode)?;
                let mut trial = MemorizationTrial {
                    entity: entity.name.clone(),
                    band: entity.band(),
                    condition,
                    headline_index: hi,
                    headline: headline.clone(),
                    memorized: None,
                    completion: String::new(),
                    error: None,
                };
                match backend.complete(&prompt.full_text, &settings.params, None) {
                    Ok(c) => {
                        trial.memorized = Some(detect_with_rule(
                            &c.text,
                            entity,
                            settings.mention_rule,
                            &settings.slot,
                        ));
                        trial.completion = c.text;
                        Ok((trial, false))
                    }
                    Err(e @ BackendError::Unavailable { .. }) => {
                        trial.error = Some(e.to_string());
                        Ok((trial, true))
                    }
                    Err(e) => Err(e.into()),
                }
            })
            .collect()
    });

    let mut trials = Vec::with_capacity(results.len());
    let mut partial = false;
    let mut cells: Vec<BandCell> = FrequencyBand::ALL
        .into_iter()
        .map(|b| BandCell::empty(b, condition))
        .collect();
    for r in results {
        let (trial, unavailable) = r?;
        partial |= unavailable;
        let cell = &mut cells[FrequencyBand::ALL.iter().position(|b| *b == trial.band).unwrap()];
        cell.n_trials += 1;
        match trial.memorized {
            Some(true) => cell.n_memorized += 1,
            Some(false) => {}
            None => cell.n_errored += 1,
        }
        trials.push(trial);
    }
    for c in &mut cells {
        c.refresh_rate();
    }
    Ok(MemorizationRun {
        report: MemorizationReport {
            format: MEMORIZATION_FORMAT.to_string(),
            backend: backend.name(),
            slot: settings.slot.clone(),
            mention_rule: settings.mention_rule,
            k_shot: demos.len(),
            seed: settings.seed,
            params: settings.params,
            cells,
            demo_overlap: overlap,
            demo_entities_excluded: !settings.include_demo_entities,
            partial,
        },
        trials,
    })
}
