//! Coalition games whose players are the non-empty aspect slots of one item.

use serde::{Deserialize, Serialize};

use super::game::{Coalition, CoalitionGame, GameError};
use super::shapley::{exact_shapley, sampled_shapley, AttributionResult, Scoring};
use crate::backend::{GenerationParams, LanguageModel};
use crate::bindings::AspectBindings;
use crate::prompt::{
    ablate_bindings, render_prompt, Demonstration, ParseError, PromptMode, PromptTemplate,
};

/// What to do when a completion cannot be parsed in scalar-output scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailurePolicy {
    /// Score the coalition as the minimum of the label scale.
    #[default]
    ScaleMinimum,
    Abort,
}

/// Everything needed to score one item under aspect ablations.
#[derive(Clone, Copy)]
pub struct AspectGameInput<'a> {
    pub backend: &'a dyn LanguageModel,
    pub template: &'a PromptTemplate,
    pub demos: &'a [Demonstration],
    pub item_text: &'a str,
    pub bindings: &'a AspectBindings,
    pub target: Option<&'a str>,
    pub scoring: Scoring,
    pub params: GenerationParams,
    pub on_parse_failure: ParseFailurePolicy,
}

/// A coalition game over aspects plus the mapping from players to slots.
pub struct AspectGame<'a> {
    pub game: CoalitionGame<'a>,
    /// Bindings conformed to the template schema.
    pub bindings: AspectBindings,
    /// Slot index (in `bindings`) of each player.
    pub players: Vec<usize>,
}

fn score_prompt(input: &AspectGameInput<'_>, prompt: &str) -> Result<f64, GameError> {
    let backend_err = |e: crate::backend::BackendError| GameError::Evaluation(e.to_string());
    match input.scoring {
        Scoring::TargetLogprob => {
            let c = input.backend.complete(prompt, &input.params, input.target).map_err(backend_err)?;
            c.target_logprob
                .ok_or_else(|| GameError::Evaluation("backend returned no target log-probability".into()))
        }
        Scoring::ScalarOutput => {
            let c = input.backend.complete(prompt, &input.params, None).map_err(backend_err)?;
            let contract = &input.template.output_contract;
            let parsed: Result<f64, ParseError> = contract.parse(&c.text).map(|label| {
                contract.scale.numeric(&label).unwrap_or_else(|| contract.scale.minimum_value())
            });
            match (parsed, input.on_parse_failure) {
                (Ok(v), _) => Ok(v),
                (Err(_), ParseFailurePolicy::ScaleMinimum) => Ok(contract.scale.minimum_value()),
                (Err(e), ParseFailurePolicy::Abort) => Err(GameError::Evaluation(e.to_string())),
            }
        }
    }
}

/// Builds the lazily evaluated aspect game for one item.
///
/// `f(S)` renders the mac prompt with only the slots in `S` filled (other
/// slots keep empty parentheses) and scores it with the requested mode.
/// `f(∅)` is therefore the all-empty mac prompt, not the vanilla prompt.
pub fn build_aspect_game<'a>(input: AspectGameInput<'a>) -> Result<AspectGame<'a>, GameError> {
    let bindings = input
        .template
        .schema
        .conform(input.bindings)
        .map_err(|e| GameError::InvalidArgument(e.to_string()))?;
    let players = bindings.non_empty_slots();
    if players.is_empty() {
        return Err(GameError::NoPlayers);
    }
    if input.scoring == Scoring::TargetLogprob {
        if input.target.is_none() {
            return Err(GameError::InvalidArgument(
                "target log-probability scoring needs a target continuation".into(),
            ));
        }
        if !input.backend.supports_target_scoring() {
            return Err(GameError::Capability(format!(
                "backend {} cannot score target continuations; use scalar output scoring",
                input.backend.name()
            )));
        }
    }
    // Validate the full prompt once so template problems surface eagerly.
    render_prompt(input.template, input.demos, input.item_text, &bindings, PromptMode::Mac)
        .map_err(|e| GameError::InvalidArgument(e.to_string()))?;

    let game_bindings = bindings.clone();
    let game_players = players.clone();
    let game = CoalitionGame::new(players.len(), move |s: Coalition| {
        let keep: Vec<usize> = game_players
            .iter()
            .enumerate()
            .filter(|(p, _)| s & (1 << p) != 0)
            .map(|(_, &slot)| slot)
            .collect();
        let ablated = ablate_bindings(&game_bindings, &keep)
            .map_err(|e| GameError::Evaluation(e.to_string()))?;
        let prompt = render_prompt(input.template, input.demos, input.item_text, &ablated, PromptMode::Mac)
            .map_err(|e| GameError::Evaluation(e.to_string()))?;
        score_prompt(&input, &prompt.full_text)
    })?;
    Ok(AspectGame {
        game,
        bindings,
        players,
    })
}

/// How Shapley values are computed for an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

/// Estimates Shapley values over the item's aspect game. The result also
/// records the scoring mode and the vanilla-prompt reference value.
pub fn attribute_item(
    input: AspectGameInput<'_>,
    estimator: Estimator,
) -> Result<(AttributionResult, AspectBindings), GameError> {
    let ag = build_aspect_game(input)?;
    let mut result = match estimator {
        Estimator::Exact => exact_shapley(&ag.game)?,
        Estimator::Sampled { permutations, seed } => sampled_shapley(&ag.game, permutations, seed)?,
    };
    let vanilla = render_prompt(input.template, input.demos, input.item_text, &ag.bindings, PromptMode::Vanilla)
        .map_err(|e| GameError::Evaluation(e.to_string()))?;
    result.scoring = Some(input.scoring);
    result.reference_value = score_prompt(&input, &vanilla.full_text).ok();
    Ok((result, ag.bindings))
}
