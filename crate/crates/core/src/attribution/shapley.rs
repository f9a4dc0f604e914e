use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::game::{Coalition, CoalitionGame, GameError};

/// Largest player count accepted by [`exact_shapley`].
pub const MAX_EXACT_PLAYERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Log-probability of a fixed target continuation.
    TargetLogprob,
    /// Numeric answer parsed from the completion.
    ScalarOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub aspects: Vec<AspectEstimate>,
    /// Value of the empty coalition.
    pub baseline_value: f64,
    /// Value of the grand coalition.
    pub full_value: f64,
    pub permutations_used: u64,
    pub seed: u64,
    pub method: Method,
    #[serde(default)]
    pub scoring: Option<Scoring>,
    /// Value of the same item rendered without any aspects line.
    #[serde(default)]
    pub reference_value: Option<f64>,
}

impl AttributionResult {
    pub fn estimates(&self) -> Vec<f64> {
        self.aspects.iter().map(|a| a.estimate).collect()
    }

    /// `Σφ − (f(N) − f(∅))`; zero for exact results up to rounding.
    pub fn efficiency_gap(&self) -> f64 {
        self.aspects.iter().map(|a| a.estimate).sum::<f64>() - (self.full_value - self.baseline_value)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Exact Shapley values by enumerating all `2^n` coalitions.
///
/// `φ_i = Σ_{S ∌ i} |S|!(n−|S|−1)!/n! · (f(S ∪ {i}) − f(S))`
pub fn exact_shapley(game: &CoalitionGame<'_>) -> Result<AttributionResult, GameError> {
    let n = game.n();
    if n > MAX_EXACT_PLAYERS {
        return Err(GameError::Capacity {
            n,
            max: MAX_EXACT_PLAYERS,
        });
    }
    let size = 1usize << n;
    let values: Vec<f64> = (0..size as Coalition)
        .into_par_iter()
        .map(|s| game.value(s))
        .collect::<Result<_, _>>()?;
    // weight[s] = s!(n-s-1)!/n! = 1 / (n * C(n-1, s))
    let weight: Vec<f64> = (0..n).map(|s| 1.0 / (n as f64 * binomial(n - 1, s))).collect();

    let aspects = (0..n)
        .map(|i| {
            let bit = 1usize << i;
            // Accumulate per coalition size first so interchangeable players
            // see identical partial sums.
            let mut by_size = vec![0.0f64; n];
            for s in 0..size {
                if s & bit == 0 {
                    by_size[s.count_ones() as usize] += values[s | bit] - values[s];
                }
            }
            let estimate = by_size.iter().zip(&weight).map(|(d, w)| d * w).sum();
            AspectEstimate {
                estimate,
                stderr: 0.0,
                n_samples: (size / 2) as u64,
            }
        })
        .collect();

    Ok(AttributionResult {
        aspects,
        baseline_value: values[0],
        full_value: values[size - 1],
        permutations_used: factorial(n),
        seed: 0,
        method: Method::Exact,
        scoring: None,
        reference_value: None,
    })
}

/// The `index`-th random permutation for `seed`. Each permutation has its
/// own ChaCha stream, so the draw does not depend on evaluation order.
pub fn permutation(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn marginals(game: &CoalitionGame<'_>, order: &[usize]) -> Result<Vec<f64>, GameError> {
    let mut out = vec![0.0; order.len()];
    let mut prefix: Coalition = 0;
    let mut prev = game.value(prefix)?;
    for &i in order {
        prefix |= 1 << i;
        let next = game.value(prefix)?;
        out[i] = next - prev;
        prev = next;
    }
    Ok(out)
}

/// Shapley values estimated from `m` random permutations.
///
/// Each permutation credits every player with its marginal contribution
/// when added to the players before it. Estimates are per-player means;
/// the standard error is the sample standard deviation over `√m` (zero
/// when `m == 1`). Permutations are evaluated in parallel but folded in
/// index order, so results are identical for any thread count.
pub fn sampled_shapley(
    game: &CoalitionGame<'_>,
    m_permutations: usize,
    seed: u64,
) -> Result<AttributionResult, GameError> {
    if m_permutations == 0 {
        return Err(GameError::InvalidArgument("at least one permutation is required".into()));
    }
    let n = game.n();
    let per_perm: Vec<Vec<f64>> = (0..m_permutations as u64)
        .into_par_iter()
        .map(|k| marginals(game, &permutation(n, seed, k)))
        .collect::<Result<_, _>>()?;

    // Welford keeps constant marginals exact.
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for (k, row) in per_perm.iter().enumerate() {
        let count = (k + 1) as f64;
        for i in 0..n {
            let delta = row[i] - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (row[i] - mean[i]);
        }
    }
    let m = m_permutations as f64;
    let aspects = (0..n)
        .map(|i| AspectEstimate {
            estimate: mean[i],
            stderr: if m_permutations > 1 {
                (m2[i] / (m - 1.0)).max(0.0).sqrt() / m.sqrt()
            } else {
                0.0
            },
            n_samples: m_permutations as u64,
        })
        .collect();

    Ok(AttributionResult {
        aspects,
        baseline_value: game.value(0)?,
        full_value: game.value(game.grand_coalition())?,
        permutations_used: m_permutations as u64,
        seed,
        method: Method::Sampled,
        scoring: None,
        reference_value: None,
    })
}
