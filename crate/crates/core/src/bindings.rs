//! Per-slot aspect values found in a piece of text.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Half-open interval `[start, end)` measured in characters (Unicode scalar
/// values) of the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// One bound value. Matches produced by extraction always carry a span;
/// hand-written demonstration bindings may omit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "MatchRepr")]
pub struct AspectMatch {
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatchRepr {
    Bare(String),
    Full {
        value: String,
        #[serde(default)]
        span: Option<Span>,
    },
}

impl From<MatchRepr> for AspectMatch {
    fn from(repr: MatchRepr) -> Self {
        match repr {
            MatchRepr::Bare(value) => AspectMatch { value, span: None },
            MatchRepr::Full { value, span } => AspectMatch { value, span },
        }
    }
}

impl AspectMatch {
    pub fn new(value: impl Into<String>, span: Span) -> Self {
        Self {
            value: value.into(),
            span: Some(span),
        }
    }

    pub fn unspanned(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            span: None,
        }
    }
}

/// Ordered mapping from slot name to the values bound in that slot.
///
/// Slot order is significant: slot indices used by ablation refer to it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectBindings {
    slots: IndexMap<String, Vec<AspectMatch>>,
}

impl AspectBindings {
    /// Bindings with every slot present and empty.
    pub fn empty<I, S>(slots: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            slots: slots.into_iter().map(|s| (s.into(), Vec::new())).collect(),
        }
    }

    /// Builds bindings from `(slot, values)` pairs without spans.
    pub fn from_values<I, S, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<V>)>,
        S: Into<String>,
        V: Into<String>,
    {
        Self {
            slots: pairs
                .into_iter()
                .map(|(s, vs)| {
                    (
                        s.into(),
                        vs.into_iter().map(AspectMatch::unspanned).collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// True when no slot holds a value.
    pub fn is_blank(&self) -> bool {
        self.slots.values().all(Vec::is_empty)
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn contains_slot(&self, slot: &str) -> bool {
        self.slots.contains_key(slot)
    }

    pub fn get(&self, slot: &str) -> Option<&[AspectMatch]> {
        self.slots.get(slot).map(Vec::as_slice)
    }

    pub fn get_index(&self, index: usize) -> Option<(&str, &[AspectMatch])> {
        self.slots
            .get_index(index)
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[AspectMatch])> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Ensures `slot` exists (appending it when new) and returns its values.
    pub fn slot_mut(&mut self, slot: &str) -> &mut Vec<AspectMatch> {
        self.slots.entry(slot.to_string()).or_default()
    }

    pub fn push(&mut self, slot: &str, m: AspectMatch) {
        self.slot_mut(slot).push(m);
    }

    /// Distinct values of a slot in first-match order.
    pub fn distinct_values(&self, slot: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for m in self.get(slot).unwrap_or(&[]) {
            if !out.contains(&m.value.as_str()) {
                out.push(&m.value);
            }
        }
        out
    }

    /// Indices of slots holding at least one value.
    pub fn non_empty_slots(&self) -> Vec<usize> {
        self.slots
            .values()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy keeping values only for slots whose index satisfies `keep`.
    pub(crate) fn retain_slots(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            slots: self
                .slots
                .iter()
                .enumerate()
                .map(|(i, (k, v))| (k.clone(), if keep(i) { v.clone() } else { Vec::new() }))
                .collect(),
        }
    }

    /// Checks that spans fit a source text of `text_chars` characters and
    /// are sorted without overlap within each slot.
    pub fn validate_spans(&self, text_chars: usize) -> Result<(), String> {
        for (slot, matches) in &self.slots {
            let mut prev: Option<Span> = None;
            for m in matches {
                let Some(span) = m.span else { continue };
                if span.start > span.end || span.end > text_chars {
                    return Err(format!(
                        "slot {slot}: span {}..{} outside text of {text_chars} characters",
                        span.start, span.end
                    ));
                }
                if let Some(p) = prev {
                    if span.start < p.end {
                        return Err(format!(
                            "slot {slot}: span {}..{} overlaps or precedes {}..{}",
                            span.start, span.end, p.start, p.end
                        ));
                    }
                }
                prev = Some(span);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deserializes_bare_and_spanned_values() {
        let b: AspectBindings = serde_json::from_str(
            r#"{"Competitor": [], "TSP": [{"value": "Mascom", "span": {"start": 0, "end": 6}}], "Product": ["5G Core"]}"#,
        )
        .unwrap();
        assert_eq!(b.slot_names().collect::<Vec<_>>(), ["Competitor", "TSP", "Product"]);
        assert_eq!(b.get("TSP").unwrap()[0].span, Some(Span::new(0, 6)));
        assert_eq!(b.get("Product").unwrap()[0].span, None);
        assert_eq!(b.non_empty_slots(), vec![1, 2]);
    }

    #[test]
    fn span_validation() {
        let mut b = AspectBindings::empty(["TSP"]);
        b.push("TSP", AspectMatch::new("a", Span::new(0, 3)));
        b.push("TSP", AspectMatch::new("b", Span::new(2, 5)));
        assert!(b.validate_spans(10).is_err());
        let mut ok = AspectBindings::empty(["TSP"]);
        ok.push("TSP", AspectMatch::new("a", Span::new(0, 3)));
        assert!(ok.validate_spans(2).is_err());
        assert!(ok.validate_spans(3).is_ok());
    }

    #[test]
    fn distinct_values_keep_first_order() {
        let b = AspectBindings::from_values([("P", vec!["x", "y", "x"])]);
        assert_eq!(b.distinct_values("P"), vec!["x", "y"]);
    }
}
