//! JSON and plain-text renderings of an attribution result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::shapley::{AspectEstimate, AttributionResult, Method, Scoring};
use crate::bindings::{AspectBindings, Span};

pub const REPORT_FORMAT: &str = "aspect-attribution/1";

/// Contributions with magnitude below this print as neutral zeros.
const NEUTRAL_EPS: f64 = 5e-5;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("result has {result} aspects but bindings have {bindings} non-empty slots")]
    CountMismatch { result: usize, bindings: usize },
    #[error("unsupported report format `{0}`")]
    Format(String),
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedAspect {
    pub slot: String,
    pub values: Vec<String>,
    pub spans: Vec<Span>,
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

/// Versioned attribution report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub format: String,
    pub item_text: String,
    pub method: Method,
    pub scoring: Option<Scoring>,
    pub seed: u64,
    pub permutations_used: u64,
    pub baseline_value: f64,
    pub full_value: f64,
    pub reference_value: Option<f64>,
    /// One entry per player, in slot order.
    pub aspects: Vec<ReportedAspect>,
}

impl AttributionReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<Self, ReportError> {
        let r: Self = serde_json::from_str(json)?;
        if r.format != REPORT_FORMAT {
            return Err(ReportError::Format(r.format));
        }
        Ok(r)
    }

    /// Rebuilds the attribution result the report was made from.
    pub fn to_result(&self) -> AttributionResult {
        AttributionResult {
            aspects: self
                .aspects
                .iter()
                .map(|a| AspectEstimate {
                    estimate: a.estimate,
                    stderr: a.stderr,
                    n_samples: a.n_samples,
                })
                .collect(),
            baseline_value: self.baseline_value,
            full_value: self.full_value,
            permutations_used: self.permutations_used,
            seed: self.seed,
            method: self.method,
            scoring: self.scoring,
            reference_value: self.reference_value,
        }
    }

    /// ASCII heatmap: the item text with each aspect span bracketed and
    /// tagged with its signed contribution, then a ranking table sorted by
    /// descending contribution. `ansi` adds colour to the brackets.
    pub fn heatmap(&self, ansi: bool) -> String {
        let mut out = String::new();
        let method = match self.method {
            Method::Exact => "exact enumeration".to_string(),
            Method::Sampled => format!(
                "{} sampled permutations, seed {}",
                self.permutations_used, self.seed
            ),
        };
        let scoring = match self.scoring {
            Some(Scoring::TargetLogprob) => "target log-probability",
            Some(Scoring::ScalarOutput) => "scalar output",
            None => "unspecified",
        };
        out.push_str(&format!("Aspect attribution ({method}; scoring: {scoring})\n"));
        out.push_str(&format!(
            "baseline f(empty) = {:.4}   full f(all) = {:.4}",
            self.baseline_value, self.full_value
        ));
        if let Some(r) = self.reference_value {
            out.push_str(&format!("   no-aspects prompt = {r:.4}"));
        }
        out.push_str("\n\n");
        out.push_str(&self.marked_text(ansi));
        out.push_str("\n\n");

        let mut order: Vec<usize> = (0..self.aspects.len()).collect();
        order.sort_by(|&a, &b| {
            self.aspects[b]
                .estimate
                .total_cmp(&self.aspects[a].estimate)
                .then(a.cmp(&b))
        });
        let max_abs = self
            .aspects
            .iter()
            .map(|a| a.estimate.abs())
            .fold(0.0f64, f64::max);
        let slot_w = self.aspects.iter().map(|a| a.slot.len()).max().unwrap_or(4).max(4);
        out.push_str(&format!(
            "rank  mark  contribution    stderr  {:<slot_w$}  value\n",
            "slot"
        ));
        for (rank, &i) in order.iter().enumerate() {
            let a = &self.aspects[i];
            let bar_len = if max_abs > 0.0 {
                ((a.estimate.abs() / max_abs) * 20.0).round() as usize
            } else {
                0
            };
            let bar_char = if a.estimate >= 0.0 { '#' } else { '-' };
            out.push_str(&format!(
                "{:<4}  {:^4}  {:>12}  {:>8.4}  {:<slot_w$}  {}  {}\n",
                rank + 1,
                marker(a.estimate),
                signed(a.estimate),
                a.stderr,
                a.slot,
                a.values.join(", "),
                std::iter::repeat_n(bar_char, bar_len).collect::<String>(),
            ));
        }
        out
    }

    fn marked_text(&self, ansi: bool) -> String {
        let chars: Vec<char> = self.item_text.chars().collect();
        let mut marks: Vec<(Span, f64)> = self
            .aspects
            .iter()
            .flat_map(|a| a.spans.iter().map(move |s| (*s, a.estimate)))
            .filter(|(s, _)| s.end <= chars.len() && !s.is_empty())
            .collect();
        marks.sort_by_key(|(s, _)| (s.start, std::cmp::Reverse(s.end)));
        let mut out = String::new();
        let mut pos = 0;
        for (span, est) in marks {
            if span.start < pos {
                continue;
            }
            out.extend(&chars[pos..span.start]);
            let inner: String = chars[span.start..span.end].iter().collect();
            let tagged = format!("[{inner}]{{{}}}", signed(est));
            if ansi {
                let colour = if est.abs() < NEUTRAL_EPS {
                    "\x1b[2m"
                } else if est > 0.0 {
                    "\x1b[32m"
                } else {
                    "\x1b[31m"
                };
                out.push_str(&format!("{colour}{tagged}\x1b[0m"));
            } else {
                out.push_str(&tagged);
            }
            pos = span.end;
        }
        out.extend(&chars[pos..]);
        out
    }
}

fn marker(v: f64) -> &'static str {
    if v.abs() < NEUTRAL_EPS {
        "="
    } else if v > 0.0 {
        "+"
    } else {
        "-"
    }
}

fn signed(v: f64) -> String {
    if v.abs() < NEUTRAL_EPS {
        "0.0000".to_string()
    } else {
        format!("{v:+.4}")
    }
}

/// Pairs each estimate with its slot and the slot's matches.
///
/// Players are the non-empty slots of `bindings`, in slot order.
pub fn render_attribution_report(
    result: &AttributionResult,
    bindings: &AspectBindings,
    item_text: &str,
) -> Result<AttributionReport, ReportError> {
    let players = bindings.non_empty_slots();
    if players.len() != result.aspects.len() {
        return Err(ReportError::CountMismatch {
            result: result.aspects.len(),
            bindings: players.len(),
        });
    }
    let aspects = players
        .iter()
        .zip(&result.aspects)
        .map(|(&slot_idx, est)| {
            let (slot, matches) = bindings.get_index(slot_idx).expect("index from bindings");
            ReportedAspect {
                slot: slot.to_string(),
                values: bindings.distinct_values(slot).into_iter().map(String::from).collect(),
                spans: matches.iter().filter_map(|m| m.span).collect(),
                estimate: est.estimate,
                stderr: est.stderr,
                n_samples: est.n_samples,
            }
        })
        .collect();
    Ok(AttributionReport {
        format: REPORT_FORMAT.to_string(),
        item_text: item_text.to_string(),
        method: result.method,
        scoring: result.scoring,
        seed: result.seed,
        permutations_used: result.permutations_used,
        baseline_value: result.baseline_value,
        full_value: result.full_value,
        reference_value: result.reference_value,
        aspects,
    })
}
