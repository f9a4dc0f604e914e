//! Multi-aspect cueing toolkit for black-box language models.
//!
//! The crate covers the whole loop around an aspect-cued prompt:
//!
//! * [`extract`] finds aspect values such as competitor names in text,
//!   using a knowledge base of surface forms and patterns.
//! * [`prompt`] assembles prompts in each [`prompt::PromptMode`] and parses
//!   structured answers back out of completions.
//! * [`backend`] talks to a model: an OpenAI-compatible HTTP client or a
//!   deterministic scripted backend used as a test oracle.
//! * [`attribution`] attributes a model output to individual aspects with
//!   exact and permutation-sampled Shapley values.
//! * [`memorization`] and [`eval`] run the memorization and classification
//!   evaluation protocols.
//! * [`cli`] wires everything behind the `aspectcue` command.

pub mod attribution;
pub mod backend;
pub mod bindings;
pub mod cli;
pub mod config;
pub mod eval;
pub mod extract;
pub mod memorization;
pub mod prompt;

pub use bindings::{AspectBindings, AspectMatch, Span};
