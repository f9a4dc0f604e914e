//! Prompt assembly in each [`PromptMode`], plus parsing of structured answers out of completions.
//!
//! A rendered prompt is laid out as blank-line separated blocks:
//!
//! ```text
//! <instruction>[ <reasoning trigger>]      always
//! <context>                                 when non-empty
//! ARTICLE: ... / ASPECTS: ... / OUTPUT: ... one block per demonstration
//! ARTICLE: <item>                           always
//! ASPECTS: Competitor (), TSP (Mascom), ... mac mode only
//! ```
//!
//! Aspect slots always appear in schema order. An empty slot keeps its
//! header with empty parentheses so that the prompt shape is identical
//! across aspect ablations.

use std::fmt;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bindings::AspectBindings;

pub const DEFAULT_COT_TRIGGER: &str =
    "Explain your reasoning step by step before giving the final answer.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("slot `{0}` is not part of the aspect schema")]
    SchemaMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("slot index {index} out of range for {n_slots} slots")]
    InvalidSubset { index: usize, n_slots: usize },
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed template file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("completion is empty")]
    EmptyCompletion,
    #[error("no well-formed {{\"{key}\": ...}} fragment in completion")]
    NoFragment { key: String },
    #[error("answer `{value}` lies outside the label scale")]
    OutOfRange { value: String },
}

/// Ordered, duplicate-free list of aspect slot names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct AspectSchema {
    slots: Vec<String>,
}

impl AspectSchema {
    pub fn new<I, S>(slots: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let slots: Vec<String> = slots.into_iter().map(Into::into).collect();
        for (i, s) in slots.iter().enumerate() {
            if s.trim().is_empty() {
                return Err(PromptError::InvalidTemplate("empty slot name".into()));
            }
            if slots[..i].contains(s) {
                return Err(PromptError::InvalidTemplate(format!("duplicate slot `{s}`")));
            }
        }
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, slot: &str) -> bool {
        self.slots.iter().any(|s| s == slot)
    }

    pub fn position(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    /// Bindings with every schema slot present and empty.
    pub fn empty_bindings(&self) -> AspectBindings {
        AspectBindings::empty(self.slots.iter().cloned())
    }

    /// Fails on the first bindings slot the schema does not know.
    pub fn check_bindings(&self, bindings: &AspectBindings) -> Result<(), PromptError> {
        match bindings.slot_names().find(|s| !self.contains(s)) {
            Some(s) => Err(PromptError::SchemaMismatch(s.to_string())),
            None => Ok(()),
        }
    }

    /// Schema-ordered copy of `bindings` that silently drops slots the
    /// schema does not know.
    pub fn restrict(&self, bindings: &AspectBindings) -> AspectBindings {
        let mut out = self.empty_bindings();
        for slot in &self.slots {
            if let Some(ms) = bindings.get(slot) {
                out.slot_mut(slot).extend(ms.iter().cloned());
            }
        }
        out
    }

    /// Re-keys `bindings` into schema order, adding missing slots as empty.
    pub fn conform(&self, bindings: &AspectBindings) -> Result<AspectBindings, PromptError> {
        self.check_bindings(bindings)?;
        let mut out = self.empty_bindings();
        for slot in &self.slots {
            if let Some(ms) = bindings.get(slot) {
                out.slot_mut(slot).extend(ms.iter().cloned());
            }
        }
        Ok(out)
    }
}

impl<'de> Deserialize<'de> for AspectSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let slots = Vec::<String>::deserialize(d)?;
        AspectSchema::new(slots).map_err(serde::de::Error::custom)
    }
}

/// A predicted or gold label: an integer score/index or a categorical name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(i64),
    Text(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(v) => write!(f, "{v}"),
            Label::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelScale {
    /// Inclusive integer range.
    Range { min: i64, max: i64 },
    Categorical { labels: Vec<String> },
}

impl LabelScale {
    pub fn contains(&self, label: &Label) -> bool {
        match (self, label) {
            (LabelScale::Range { min, max }, Label::Int(v)) => (*min..=*max).contains(v),
            (LabelScale::Categorical { labels }, Label::Text(s)) => labels.contains(s),
            _ => false,
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        match self {
            LabelScale::Range { min, max } => (*min..=*max).map(Label::Int).collect(),
            LabelScale::Categorical { labels } => labels.iter().cloned().map(Label::Text).collect(),
        }
    }

    /// Smallest label as a real number (range minimum, or index 0).
    pub fn minimum_value(&self) -> f64 {
        match self {
            LabelScale::Range { min, .. } => *min as f64,
            LabelScale::Categorical { .. } => 0.0,
        }
    }

    /// Numeric reading of a label: the integer itself, or the category's
    /// position in the label list.
    pub fn numeric(&self, label: &Label) -> Option<f64> {
        match (self, label) {
            (LabelScale::Range { .. }, Label::Int(v)) => Some(*v as f64),
            (LabelScale::Categorical { labels }, Label::Text(s)) => {
                labels.iter().position(|l| l == s).map(|p| p as f64)
            }
            _ => None,
        }
    }
}

/// What the model is asked to emit: `{"<output_key>": <label>}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputContract {
    pub scale: LabelScale,
    #[serde(default = "default_output_key")]
    pub output_key: String,
}

fn default_output_key() -> String {
    "score".to_string()
}

impl Default for OutputContract {
    fn default() -> Self {
        Self {
            scale: LabelScale::Range { min: 1, max: 4 },
            output_key: default_output_key(),
        }
    }
}

impl OutputContract {
    pub fn new(scale: LabelScale, output_key: impl Into<String>) -> Result<Self, PromptError> {
        let c = Self {
            scale,
            output_key: output_key.into(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.output_key.is_empty() || self.output_key.contains('"') {
            return Err(PromptError::InvalidTemplate(format!(
                "invalid output key `{}`",
                self.output_key
            )));
        }
        match &self.scale {
            LabelScale::Range { min, max } if min >= max => Err(PromptError::InvalidTemplate(
                format!("label range {min}..{max} is empty or degenerate"),
            )),
            LabelScale::Categorical { labels } if labels.is_empty() => {
                Err(PromptError::InvalidTemplate("empty label set".into()))
            }
            _ => Ok(()),
        }
    }

    /// The canonical answer fragment, e.g. `{"score": 2}`.
    pub fn format(&self, label: &Label) -> String {
        let key = &self.output_key;
        match label {
            Label::Int(v) => format!("{{\"{key}\": {v}}}"),
            Label::Text(s) => format!("{{\"{key}\": {}}}", serde_json::Value::from(s.as_str())),
        }
    }

    fn fragment_regex(&self) -> Regex {
        let key = regex::escape(&self.output_key);
        let q = r#"["“”']"#;
        Regex::new(&format!(
            r#"\{{\s*{q}{key}{q}\s*:\s*(?:"([^"\n]*)"|“([^”\n]*)”|(-?\d+))\s*\}}"#
        ))
        .expect("fragment pattern is valid")
    }

    fn interpret(&self, raw: &str) -> Option<Label> {
        let raw = raw.trim();
        match &self.scale {
            LabelScale::Range { .. } => raw.parse().ok().map(Label::Int),
            LabelScale::Categorical { labels } => labels
                .iter()
                .find(|l| l.eq_ignore_ascii_case(raw))
                .map(|l| Label::Text(l.clone())),
        }
    }

    /// Extracts the answer from a completion.
    ///
    /// Takes the last well-formed fragment whose value is on the scale, so
    /// narrated reasoning that quotes other fragments earlier is tolerated.
    pub fn parse(&self, completion: &str) -> Result<Label, ParseError> {
        if completion.trim().is_empty() {
            return Err(ParseError::EmptyCompletion);
        }
        let re = self.fragment_regex();
        let mut last_raw: Option<String> = None;
        let mut last_valid: Option<Label> = None;
        for caps in re.captures_iter(completion) {
            let raw = (1..=3).find_map(|i| caps.get(i)).map(|m| m.as_str()).unwrap_or("");
            if let Some(label) = self.interpret(raw).filter(|l| self.scale.contains(l)) {
                last_valid = Some(label);
            }
            last_raw = Some(raw.to_string());
        }
        match (last_valid, last_raw) {
            (Some(label), _) => Ok(label),
            (None, Some(raw)) => Err(ParseError::OutOfRange { value: raw }),
            (None, None) => Err(ParseError::NoFragment {
                key: self.output_key.clone(),
            }),
        }
    }
}

/// Convenience wrapper over [`OutputContract::parse`].
pub fn parse_output(completion: &str, contract: &OutputContract) -> Result<Label, ParseError> {
    contract.parse(completion)
}

/// Line labels used in rendered prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectionLabels {
    pub input: String,
    pub aspects: String,
    pub output: String,
}

impl Default for SectionLabels {
    fn default() -> Self {
        Self {
            input: "ARTICLE".into(),
            aspects: "ASPECTS".into(),
            output: "OUTPUT".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction: String,
    #[serde(default)]
    pub context: String,
    pub schema: AspectSchema,
    #[serde(default)]
    pub output_contract: OutputContract,
    /// Sentence appended to the instruction in chain-of-thought mode.
    #[serde(default = "default_cot_trigger")]
    pub cot_trigger: String,
    #[serde(default)]
    pub labels: SectionLabels,
}

fn default_cot_trigger() -> String {
    DEFAULT_COT_TRIGGER.to_string()
}

impl PromptTemplate {
    pub fn new(
        instruction: impl Into<String>,
        context: impl Into<String>,
        schema: AspectSchema,
        output_contract: OutputContract,
    ) -> Result<Self, PromptError> {
        let t = Self {
            instruction: instruction.into(),
            context: context.into(),
            schema,
            output_contract,
            cot_trigger: default_cot_trigger(),
            labels: SectionLabels::default(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.instruction.trim().is_empty() {
            return Err(PromptError::InvalidTemplate("instruction is empty".into()));
        }
        self.output_contract.validate()
    }

    /// The aspects line body, e.g. `Competitor (), TSP (Mascom), Product ()`.
    pub fn aspects_line(&self, bindings: &AspectBindings) -> String {
        self.schema
            .slots()
            .iter()
            .map(|slot| format!("{slot} ({})", bindings.distinct_values(slot).join(", ")))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub item_text: String,
    #[serde(default)]
    pub bindings: AspectBindings,
    pub gold_output: String,
}

impl Demonstration {
    pub fn new(
        item_text: impl Into<String>,
        bindings: AspectBindings,
        gold_output: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let d = Self {
            item_text: item_text.into(),
            bindings,
            gold_output: gold_output.into(),
        };
        if d.gold_output.trim().is_empty() {
            return Err(PromptError::InvalidInput("demonstration gold output is empty".into()));
        }
        Ok(d)
    }

    /// True when the gold output carries text besides its final answer
    /// fragment.
    pub fn has_reasoning(&self, contract: &OutputContract) -> bool {
        let re = contract.fragment_regex();
        !re.replace_all(&self.gold_output, "").trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Vanilla,
    Cot,
    Mac,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Vanilla => "vanilla",
            PromptMode::Cot => "cot",
            PromptMode::Mac => "mac",
        })
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(PromptMode::Vanilla),
            "cot" => Ok(PromptMode::Cot),
            "mac" => Ok(PromptMode::Mac),
            other => Err(format!("unknown prompt mode `{other}` (expected vanilla, cot or mac)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Instruction,
    Context,
    Demonstrations,
    Input,
    Aspects,
}

/// A labeled byte range `[start, end)` of [`RenderedPrompt::full_text`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub full_text: String,
    pub sections: Vec<Section>,
    pub mode: PromptMode,
}

impl RenderedPrompt {
    pub fn section(&self, kind: SectionKind) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| &self.full_text[s.start..s.end])
    }
}

impl fmt::Display for RenderedPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.full_text)
    }
}

struct Builder {
    text: String,
    sections: Vec<Section>,
}

impl Builder {
    fn block(&mut self, kind: SectionKind, body: &str) {
        if !self.text.is_empty() {
            self.text.push_str("\n\n");
        }
        let start = self.text.len();
        self.text.push_str(body);
        self.sections.push(Section {
            kind,
            start,
            end: self.text.len(),
        });
    }
}

/// Assembles the prompt for `item_text` in the requested mode.
///
/// `bindings` only affects the output in mac mode, but is validated against
/// the schema in every mode.
pub fn render_prompt(
    template: &PromptTemplate,
    demos: &[Demonstration],
    item_text: &str,
    bindings: &AspectBindings,
    mode: PromptMode,
) -> Result<RenderedPrompt, PromptError> {
    template.validate()?;
    if item_text.trim().is_empty() {
        return Err(PromptError::InvalidInput("item text is empty".into()));
    }
    template.schema.check_bindings(bindings)?;
    for (i, d) in demos.iter().enumerate() {
        template.schema.check_bindings(&d.bindings)?;
        if d.gold_output.trim().is_empty() {
            return Err(PromptError::InvalidInput(format!("demonstration {i} has no gold output")));
        }
        if mode == PromptMode::Cot && !d.has_reasoning(&template.output_contract) {
            return Err(PromptError::InvalidInput(format!(
                "chain-of-thought mode needs reasoning text in demonstration {i}"
            )));
        }
    }

    let labels = &template.labels;
    let mut b = Builder {
        text: String::new(),
        sections: Vec::new(),
    };

    let instruction = match mode {
        PromptMode::Cot if !template.cot_trigger.trim().is_empty() => {
            format!("{} {}", template.instruction.trim_end(), template.cot_trigger.trim())
        }
        _ => template.instruction.trim_end().to_string(),
    };
    b.block(SectionKind::Instruction, &instruction);

    if !template.context.trim().is_empty() {
        b.block(SectionKind::Context, template.context.trim_end());
    }

    if !demos.is_empty() {
        let body = demos
            .iter()
            .map(|d| {
                let mut s = format!("{}: {}\n", labels.input, d.item_text);
                if mode == PromptMode::Mac {
                    s.push_str(&format!(
                        "{}: {}\n",
                        labels.aspects,
                        template.aspects_line(&d.bindings)
                    ));
                }
                s.push_str(&format!("{}: {}", labels.output, d.gold_output.trim()));
                s
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        b.block(SectionKind::Demonstrations, &body);
    }

    b.block(SectionKind::Input, &format!("{}: {}", labels.input, item_text));

    if mode == PromptMode::Mac {
        b.block(
            SectionKind::Aspects,
            &format!("{}: {}", labels.aspects, template.aspects_line(bindings)),
        );
    }

    b.text.push('\n');
    Ok(RenderedPrompt {
        full_text: b.text,
        sections: b.sections,
        mode,
    })
}

/// Copy of `bindings` with values kept only in the slots listed in `keep`.
/// Every slot stays present; dropped slots become empty.
pub fn ablate_bindings(
    bindings: &AspectBindings,
    keep: &[usize],
) -> Result<AspectBindings, PromptError> {
    let n_slots = bindings.len();
    if let Some(&index) = keep.iter().find(|&&i| i >= n_slots) {
        return Err(PromptError::InvalidSubset { index, n_slots });
    }
    Ok(bindings.retain_slots(|i| keep.contains(&i)))
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    instruction: String,
    #[serde(default)]
    context: String,
    slots: Vec<String>,
    #[serde(default = "default_output_key")]
    output_key: String,
    #[serde(default = "default_scale")]
    scale: LabelScale,
    #[serde(default = "default_cot_trigger")]
    cot_trigger: String,
    #[serde(default)]
    labels: SectionLabels,
    #[serde(default)]
    demos: Vec<Demonstration>,
}

fn default_scale() -> LabelScale {
    LabelScale::Range { min: 1, max: 4 }
}

/// Parses a template document (see README for the schema).
pub fn parse_template(json: &str, origin: &str) -> Result<(PromptTemplate, Vec<Demonstration>), PromptError> {
    let file: TemplateFile = serde_json::from_str(json).map_err(|source| PromptError::Json {
        path: origin.to_string(),
        source,
    })?;
    let template = PromptTemplate {
        instruction: file.instruction,
        context: file.context,
        schema: AspectSchema::new(file.slots)?,
        output_contract: OutputContract::new(file.scale, file.output_key)?,
        cot_trigger: file.cot_trigger,
        labels: file.labels,
    };
    template.validate()?;
    for (i, d) in file.demos.iter().enumerate() {
        if d.gold_output.trim().is_empty() {
            return Err(PromptError::InvalidTemplate(format!("demos[{i}]: gold_output is empty")));
        }
        template.schema.check_bindings(&d.bindings)?;
    }
    Ok((template, file.demos))
}

/// Loads a template and its demonstrations from a JSON file.
pub fn load_template(path: &Path) -> Result<(PromptTemplate, Vec<Demonstration>), PromptError> {
    let text = fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_template(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn headline_template() -> PromptTemplate {
        PromptTemplate::new(
            "What is the relevance SCORE for the following ARTICLE?",
            "",
            AspectSchema::new(["Competitor", "TSP", "Product"]).unwrap(),
            OutputContract::default(),
        )
        .unwrap()
    }

    fn mascom() -> AspectBindings {
        AspectBindings::from_values([("TSP", vec!["Mascom"])])
    }

    const ITEM: &str = "Mascom announces new price increases in 2024";

    #[test]
    fn mac_aspects_line_matches_fixture() {
        let t = headline_template();
        let p = render_prompt(&t, &[], ITEM, &mascom(), PromptMode::Mac).unwrap();
        assert_eq!(
            p.section(SectionKind::Aspects),
            Some("ASPECTS: Competitor (), TSP (Mascom), Product ()")
        );
        assert!(p.full_text.lines().any(|l| l == "ASPECTS: Competitor (), TSP (Mascom), Product ()"));
    }

    #[test]
    fn vanilla_has_no_aspects_line() {
        let t = headline_template();
        let p = render_prompt(&t, &[], ITEM, &mascom(), PromptMode::Vanilla).unwrap();
        assert!(!p.full_text.contains("ASPECTS"));
        assert!(p.section(SectionKind::Aspects).is_none());
    }

    #[test]
    fn blank_bindings_render_empty_parentheses() {
        let t = headline_template();
        let p = render_prompt(&t, &[], ITEM, &AspectBindings::default(), PromptMode::Mac).unwrap();
        assert_eq!(
            p.section(SectionKind::Aspects),
            Some("ASPECTS: Competitor (), TSP (), Product ()")
        );
    }

    #[test]
    fn multiple_values_are_comma_joined() {
        let t = headline_template();
        let b = AspectBindings::from_values([("Product", vec!["5G Core", "RAN"])]);
        assert_eq!(t.aspects_line(&b), "Competitor (), TSP (), Product (5G Core, RAN)");
    }

    #[test]
    fn render_errors() {
        let t = headline_template();
        let bad = AspectBindings::from_values([("Vendor", vec!["x"])]);
        assert!(matches!(
            render_prompt(&t, &[], ITEM, &bad, PromptMode::Mac),
            Err(PromptError::SchemaMismatch(s)) if s == "Vendor"
        ));
        assert!(matches!(
            render_prompt(&t, &[], "  ", &mascom(), PromptMode::Mac),
            Err(PromptError::InvalidInput(_))
        ));
    }

    #[test]
    fn cot_requires_reasoning_demos() {
        let t = headline_template();
        let plain = Demonstration::new("a", AspectBindings::default(), "{\"score\": 1}").unwrap();
        assert!(render_prompt(&t, &[plain], ITEM, &mascom(), PromptMode::Cot).is_err());
        let reasoned = Demonstration::new(
            "a",
            AspectBindings::default(),
            "Nothing here concerns telecom. {\"score\": 1}",
        )
        .unwrap();
        let p = render_prompt(&t, &[reasoned], ITEM, &mascom(), PromptMode::Cot).unwrap();
        assert!(p.full_text.starts_with(&format!("{} {}", t.instruction, DEFAULT_COT_TRIGGER)));
        assert!(!p.full_text.contains("ASPECTS"));
    }

    #[test]
    fn sections_are_ordered_and_in_bounds() {
        let mut t = headline_template();
        t.context = "You assess news for a telecom operator.".into();
        let demo = Demonstration::new("Other news", mascom(), "{\"score\": 2}").unwrap();
        let p = render_prompt(&t, &[demo], ITEM, &mascom(), PromptMode::Mac).unwrap();
        let kinds: Vec<_> = p.sections.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            [
                SectionKind::Instruction,
                SectionKind::Context,
                SectionKind::Demonstrations,
                SectionKind::Input,
                SectionKind::Aspects
            ]
        );
        for w in p.sections.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        assert!(p.sections.last().unwrap().end <= p.full_text.len());
    }

    #[test]
    fn parses_fixture_outputs() {
        let c = OutputContract::default();
        let narrated = "The article mentions Mascom ... Therefore the score would be 1.\n\n{\"score\": 2}";
        assert_eq!(c.parse(narrated), Ok(Label::Int(2)));
        assert_eq!(c.parse("{\"score\":4}"), Ok(Label::Int(4)));
        assert!(matches!(c.parse("the score is four"), Err(ParseError::NoFragment { .. })));
        assert!(matches!(c.parse("{\"score\": 9}"), Err(ParseError::OutOfRange { .. })));
        assert_eq!(c.parse("{ \"score\" :\t3 } then {\"score\": 7}"), Ok(Label::Int(3)));
        assert_eq!(c.parse("{“score”: 1}"), Ok(Label::Int(1)));
        assert_eq!(c.parse("{\"score\": \"2\"}"), Ok(Label::Int(2)));
        assert_eq!(c.parse(""), Err(ParseError::EmptyCompletion));
    }

    #[test]
    fn parses_categorical_labels() {
        let c = OutputContract::new(
            LabelScale::Categorical {
                labels: vec!["negative".into(), "neutral".into(), "positive".into()],
            },
            "sentiment",
        )
        .unwrap();
        assert_eq!(c.parse("{\"sentiment\": \"Positive\"}"), Ok(Label::Text("positive".into())));
        assert_eq!(
            c.format(&Label::Text("neutral".into())),
            "{\"sentiment\": \"neutral\"}"
        );
    }

    #[test]
    fn contract_validation() {
        assert!(OutputContract::new(LabelScale::Range { min: 4, max: 4 }, "score").is_err());
        assert!(OutputContract::new(LabelScale::Categorical { labels: vec![] }, "score").is_err());
    }

    #[test]
    fn ablation_cases() {
        let b = AspectBindings::from_values([
            ("Competitor", vec![]),
            ("TSP", vec!["Mascom"]),
            ("Product", vec!["5G Core"]),
        ]);
        let kept = ablate_bindings(&b, &[1]).unwrap();
        assert_eq!(kept.distinct_values("TSP"), ["Mascom"]);
        assert!(kept.get("Product").unwrap().is_empty());
        assert_eq!(kept.len(), 3);
        assert_eq!(ablate_bindings(&b, &[0, 1, 2]).unwrap(), b);
        assert!(ablate_bindings(&b, &[]).unwrap().is_blank());
        assert!(matches!(
            ablate_bindings(&b, &[3]),
            Err(PromptError::InvalidSubset { index: 3, n_slots: 3 })
        ));
    }

    #[test]
    fn template_file_round() {
        let json = r#"{
            "instruction": "Rate it.",
            "slots": ["Competitor", "TSP", "Product"],
            "scale": {"min": 1, "max": 4},
            "demos": [{"item_text": "x", "bindings": {"TSP": ["Orange"]}, "gold_output": "{\"score\": 3}"}]
        }"#;
        let (t, demos) = parse_template(json, "inline").unwrap();
        assert_eq!(t.schema.len(), 3);
        assert_eq!(demos.len(), 1);
        let bad = json.replace("\"TSP\": [\"Orange\"]", "\"Vendor\": [\"Orange\"]");
        assert!(matches!(parse_template(&bad, "inline"), Err(PromptError::SchemaMismatch(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn bindings_strategy() -> impl Strategy<Value = AspectBindings> {
            proptest::collection::vec(proptest::collection::vec("[a-z]{1,4}", 0..3), 1..6).prop_map(
                |slots| {
                    AspectBindings::from_values(
                        slots.into_iter().enumerate().map(|(i, v)| (format!("S{i}"), v)),
                    )
                },
            )
        }

        proptest! {
            #[test]
            fn range_round_trip(v in 1i64..=4, pad in "[ \t]{0,2}") {
                let c = OutputContract::default();
                let text = format!("{{{pad}\"score\"{pad}:{pad}{v}{pad}}}");
                prop_assert_eq!(c.parse(&text), Ok(Label::Int(v)));
                prop_assert_eq!(c.parse(&c.format(&Label::Int(v))), Ok(Label::Int(v)));
            }

            #[test]
            fn ablation_lattice(b in bindings_strategy(), s in proptest::collection::vec(0usize..6, 0..6), t in proptest::collection::vec(0usize..6, 0..6)) {
                let n = b.len();
                let s: Vec<usize> = s.into_iter().filter(|&i| i < n).collect();
                let t: Vec<usize> = t.into_iter().filter(|&i| i < n).collect();
                let both: Vec<usize> = s.iter().copied().filter(|i| t.contains(i)).collect();
                let lhs = ablate_bindings(&ablate_bindings(&b, &s).unwrap(), &t).unwrap();
                prop_assert_eq!(lhs, ablate_bindings(&b, &both).unwrap());
            }

            #[test]
            fn render_is_deterministic(item in "[A-Za-z0-9 ]{1,40}", b in bindings_strategy()) {
                prop_assume!(!item.trim().is_empty());
                let slots: Vec<String> = b.slot_names().map(String::from).collect();
                let t = PromptTemplate::new("Rate.", "ctx", AspectSchema::new(slots).unwrap(), OutputContract::default()).unwrap();
                let a = render_prompt(&t, &[], &item, &b, PromptMode::Mac).unwrap();
                let c = render_prompt(&t, &[], &item, &b, PromptMode::Mac).unwrap();
                prop_assert_eq!(&a.full_text, &c.full_text);
                prop_assert_eq!(a.full_text.matches("ASPECTS:").count(), 1);
            }
        }
    }
}
