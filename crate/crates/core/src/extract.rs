//! Gazetteer-style aspect extraction from a knowledge base of surface forms
//! and regular-expression patterns.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bindings::{AspectBindings, AspectMatch, Span};

pub const KB_FORMAT: &str = "aspect-kb/1";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("failed to read knowledge base {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed knowledge base {origin} (line {line}, column {column}): {message}")]
    Malformed {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("knowledge base format `{found}` is not supported (expected `{KB_FORMAT}`)")]
    Format { found: String },
    #[error("slot `{slot}`, entry {index}: surface form is empty")]
    EmptySurface { slot: String, index: usize },
    #[error("slot `{slot}`, entry {index}: duplicate surface form `{surface}`")]
    DuplicateSurface {
        slot: String,
        index: usize,
        surface: String,
    },
    #[error("slot `{slot}`: invalid pattern `{pattern}`: {message}")]
    Pattern {
        slot: String,
        pattern: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "EntryRepr")]
pub struct LexiconEntry {
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EntryRepr {
    Bare(String),
    Full {
        surface: String,
        #[serde(default)]
        canonical: Option<String>,
    },
}

impl From<EntryRepr> for LexiconEntry {
    fn from(r: EntryRepr) -> Self {
        match r {
            EntryRepr::Bare(surface) => LexiconEntry {
                surface,
                canonical: None,
            },
            EntryRepr::Full { surface, canonical } => LexiconEntry { surface, canonical },
        }
    }
}

impl LexiconEntry {
    pub fn new(surface: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            canonical: None,
        }
    }

    pub fn with_canonical(surface: impl Into<String>, canonical: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            canonical: Some(canonical.into()),
        }
    }
}

/// On-disk knowledge base document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KbDocument {
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub slots: IndexMap<String, Vec<LexiconEntry>>,
    #[serde(default)]
    pub patterns: IndexMap<String, Vec<String>>,
}

#[derive(Debug, Clone)]
struct CompiledForm {
    folded: Vec<char>,
    canonical: Option<String>,
}

#[derive(Debug, Clone)]
struct SlotLexicon {
    name: String,
    forms: Vec<CompiledForm>,
    patterns: Vec<Regex>,
}

/// Immutable, validated knowledge base.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    slots: Vec<SlotLexicon>,
}

/// Collapses whitespace runs to one space and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case folding that keeps a one-to-one character mapping so folded
/// offsets equal source offsets. Characters whose lowercase form expands
/// to several characters are left as is.
pub fn fold_char(c: char) -> char {
    if c.is_ascii() {
        return c.to_ascii_lowercase();
    }
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl KnowledgeBase {
    pub fn from_document(doc: KbDocument) -> Result<Self, KbError> {
        if let Some(found) = &doc.format {
            if found != KB_FORMAT {
                return Err(KbError::Format {
                    found: found.clone(),
                });
            }
        }
        let mut slots: Vec<SlotLexicon> = Vec::new();
        for (name, entries) in &doc.slots {
            let mut forms: Vec<CompiledForm> = Vec::new();
            for (index, entry) in entries.iter().enumerate() {
                let surface = normalize_whitespace(&entry.surface);
                if surface.is_empty() {
                    return Err(KbError::EmptySurface {
                        slot: name.clone(),
                        index,
                    });
                }
                let folded: Vec<char> = surface.chars().map(fold_char).collect();
                if forms.iter().any(|f| f.folded == folded) {
                    return Err(KbError::DuplicateSurface {
                        slot: name.clone(),
                        index,
                        surface,
                    });
                }
                let canonical = entry
                    .canonical
                    .as_deref()
                    .map(normalize_whitespace)
                    .filter(|c| !c.is_empty());
                forms.push(CompiledForm { folded, canonical });
            }
            // A canonical name is itself findable, so re-extracting from a
            // canonical value locates the same entity.
            let implied: Vec<CompiledForm> = forms
                .iter()
                .filter_map(|f| {
                    let c = f.canonical.as_ref()?;
                    Some(CompiledForm {
                        folded: c.chars().map(fold_char).collect(),
                        canonical: Some(c.clone()),
                    })
                })
                .collect();
            for form in implied {
                if !forms.iter().any(|f| f.folded == form.folded) {
                    forms.push(form);
                }
            }
            slots.push(SlotLexicon {
                name: name.clone(),
                forms,
                patterns: Vec::new(),
            });
        }
        for (name, patterns) in &doc.patterns {
            let idx = match slots.iter().position(|s| &s.name == name) {
                Some(i) => i,
                None => {
                    slots.push(SlotLexicon {
                        name: name.clone(),
                        forms: Vec::new(),
                        patterns: Vec::new(),
                    });
                    slots.len() - 1
                }
            };
            for p in patterns {
                let re = regex::RegexBuilder::new(p)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| KbError::Pattern {
                        slot: name.clone(),
                        pattern: p.clone(),
                        message: e.to_string(),
                    })?;
                slots[idx].patterns.push(re);
            }
        }
        Ok(Self { slots })
    }

    /// Lexicon-only knowledge base, mostly for programmatic construction.
    pub fn from_lexicon<I, S>(slots: I) -> Result<Self, KbError>
    where
        I: IntoIterator<Item = (S, Vec<LexiconEntry>)>,
        S: Into<String>,
    {
        Self::from_document(KbDocument {
            format: None,
            slots: slots.into_iter().map(|(s, e)| (s.into(), e)).collect(),
            patterns: IndexMap::new(),
        })
    }

    pub fn parse(json: &str, origin: &str) -> Result<Self, KbError> {
        let doc: KbDocument = serde_json::from_str(json).map_err(|e| KbError::Malformed {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_document(doc)
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of surface forms in `slot`, including implied canonical names.
    pub fn surface_count(&self, slot: &str) -> usize {
        self.slots
            .iter()
            .find(|s| s.name == slot)
            .map_or(0, |s| s.forms.len())
    }

    /// Finds aspect values in `text`.
    ///
    /// Lexicon matching is case-insensitive and requires word boundaries on
    /// both ends. Within a slot, overlapping candidates are resolved in
    /// favour of the longer one, then the earlier one. Every slot of the
    /// knowledge base is present in the result.
    pub fn extract(&self, text: &str) -> AspectBindings {
        let chars: Vec<char> = text.chars().collect();
        let folded: Vec<char> = chars.iter().copied().map(fold_char).collect();
        let mut out = AspectBindings::empty(self.slot_names());
        for slot in &self.slots {
            let mut candidates: Vec<(Span, String)> = Vec::new();
            for form in &slot.forms {
                for start in find_bounded(&folded, &form.folded) {
                    let span = Span::new(start, start + form.folded.len());
                    let value = form
                        .canonical
                        .clone()
                        .unwrap_or_else(|| chars[span.start..span.end].iter().collect());
                    candidates.push((span, value));
                }
            }
            if !slot.patterns.is_empty() {
                let offsets = char_offsets(text);
                for re in &slot.patterns {
                    for m in re.find_iter(text) {
                        if m.start() == m.end() {
                            continue;
                        }
                        let span = Span::new(offsets[m.start()], offsets[m.end()]);
                        candidates.push((span, m.as_str().to_string()));
                    }
                }
            }
            let dest = out.slot_mut(&slot.name);
            for (span, value) in resolve_longest(candidates) {
                dest.push(AspectMatch::new(value, span));
            }
        }
        out
    }
}

/// Loads and validates a knowledge base file.
pub fn load_knowledge_base(path: &Path) -> Result<KnowledgeBase, KbError> {
    let text = fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    KnowledgeBase::parse(&text, &path.display().to_string())
}

pub fn extract_aspects(kb: &KnowledgeBase, text: &str) -> AspectBindings {
    kb.extract(text)
}

/// Case-insensitive, word-bounded occurrences of `surface` in `text`, as
/// character spans. Uses the same matching rule as lexicon extraction.
pub fn find_mentions(text: &str, surface: &str) -> Vec<Span> {
    let needle: Vec<char> = normalize_whitespace(surface).chars().map(fold_char).collect();
    let hay: Vec<char> = text.chars().map(fold_char).collect();
    find_bounded(&hay, &needle)
        .into_iter()
        .map(|start| Span::new(start, start + needle.len()))
        .collect()
}

/// Byte offset -> character offset table (one extra entry for the end).
fn char_offsets(text: &str) -> Vec<usize> {
    let mut table = vec![0usize; text.len() + 1];
    let mut n = 0;
    for (b, _) in text.char_indices() {
        table[b] = n;
        n += 1;
    }
    table[text.len()] = n;
    table
}

/// Start offsets of `needle` in `hay` that sit on word boundaries.
fn find_bounded(hay: &[char], needle: &[char]) -> Vec<usize> {
    let Some(&first) = needle.first() else {
        return Vec::new();
    };
    let last = needle[needle.len() - 1];
    let mut hits = Vec::new();
    if needle.len() > hay.len() {
        return hits;
    }
    for start in 0..=hay.len() - needle.len() {
        if hay[start] != first || hay[start..start + needle.len()] != *needle {
            continue;
        }
        let end = start + needle.len();
        let left_ok = !is_word_char(first) || start == 0 || !is_word_char(hay[start - 1]);
        let right_ok = !is_word_char(last) || end == hay.len() || !is_word_char(hay[end]);
        if left_ok && right_ok {
            hits.push(start);
        }
    }
    hits
}

/// Greedy longest-then-earliest selection of non-overlapping candidates,
/// returned sorted by start. Candidate order breaks remaining ties.
fn resolve_longest(mut candidates: Vec<(Span, String)>) -> Vec<(Span, String)> {
    // Stable sort keeps lexicon-before-pattern and KB order for exact ties.
    candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.start.cmp(&b.0.start)));
    let mut chosen: Vec<(Span, String)> = Vec::new();
    for (span, value) in candidates {
        if chosen.iter().all(|(s, _)| !s.overlaps(&span)) {
            chosen.push((span, value));
        }
    }
    chosen.sort_by_key(|(s, _)| s.start);
    chosen
}
