//! Shapley-value attribution of model outputs to prompt aspects.

mod aspect_game;
mod game;
mod report;
mod shapley;

pub use aspect_game::{
    attribute_item, build_aspect_game, AspectGame, AspectGameInput, Estimator, ParseFailurePolicy,
};
pub use game::{Coalition, CoalitionGame, GameError, MAX_PLAYERS};
pub use report::{render_attribution_report, AttributionReport, ReportError, ReportedAspect, REPORT_FORMAT};
pub use shapley::{
    exact_shapley, permutation, sampled_shapley, AspectEstimate, AttributionResult, Method, Scoring,
    MAX_EXACT_PLAYERS,
};
