use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

/// Subset of players encoded as a bitmask (bit `i` set = player `i` present).
pub type Coalition = u64;

/// Largest number of players a bitmask can hold.
pub const MAX_PLAYERS: usize = 63;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("a coalition game needs at least one player")]
    NoPlayers,
    #[error("{n} players exceed the supported maximum of {max}")]
    TooManyPlayers { n: usize, max: usize },
    #[error("exact enumeration supports at most {max} players, got {n}; use sampled Shapley values")]
    Capacity { n: usize, max: usize },
    #[error("capability missing: {0}")]
    Capability(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("game evaluation failed: {0}")]
    Evaluation(String),
}

type ValueFn<'a> = dyn Fn(Coalition) -> Result<f64, GameError> + Send + Sync + 'a;

/// Real-valued function over coalitions, memoised per subset.
///
/// Concurrent requests for the same subset block on a single evaluation;
/// the underlying function runs at most once per distinct subset.
type Cell = OnceLock<Result<f64, GameError>>;

/// Up to this many players the cache is a dense table indexed by coalition,
/// so hits take no lock.
const DENSE_CACHE_PLAYERS: usize = 16;

enum Cache {
    Dense(Vec<Cell>),
    Sparse(Mutex<HashMap<Coalition, Arc<Cell>>>),
}

pub struct CoalitionGame<'a> {
    n: usize,
    value: Box<ValueFn<'a>>,
    cache: Cache,
    evaluations: AtomicUsize,
}

impl std::fmt::Debug for CoalitionGame<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoalitionGame")
            .field("n", &self.n)
            .field("evaluations", &self.evaluations())
            .finish_non_exhaustive()
    }
}

impl<'a> CoalitionGame<'a> {
    pub fn new<F>(n: usize, value: F) -> Result<Self, GameError>
    where
        F: Fn(Coalition) -> Result<f64, GameError> + Send + Sync + 'a,
    {
        if n == 0 {
            return Err(GameError::NoPlayers);
        }
        if n > MAX_PLAYERS {
            return Err(GameError::TooManyPlayers { n, max: MAX_PLAYERS });
        }
        Ok(Self {
            n,
            value: Box::new(value),
            cache: if n <= DENSE_CACHE_PLAYERS {
                Cache::Dense((0..1usize << n).map(|_| OnceLock::new()).collect())
            } else {
                Cache::Sparse(Mutex::new(HashMap::new()))
            },
            evaluations: AtomicUsize::new(0),
        })
    }

    /// Game from a full value table indexed by coalition bitmask
    /// (`table.len()` must be a power of two, `2^n`).
    pub fn from_table(table: Vec<f64>) -> Result<Self, GameError> {
        if table.len() < 2 || !table.len().is_power_of_two() {
            return Err(GameError::InvalidArgument(format!(
                "value table length {} is not 2^n with n >= 1",
                table.len()
            )));
        }
        let n = table.len().trailing_zeros() as usize;
        Self::new(n, move |s| Ok(table[s as usize]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grand_coalition(&self) -> Coalition {
        (1u64 << self.n) - 1
    }

    /// Value of `coalition`, evaluating and caching it on first request.
    pub fn value(&self, coalition: Coalition) -> Result<f64, GameError> {
        if coalition & !self.grand_coalition() != 0 {
            return Err(GameError::InvalidArgument(format!(
                "coalition {coalition:#b} names players outside 0..{}",
                self.n
            )));
        }
        let eval = || {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
            (self.value)(coalition)
        };
        match &self.cache {
            Cache::Dense(cells) => cells[coalition as usize].get_or_init(eval).clone(),
            Cache::Sparse(map) => {
                let cell = {
                    let mut cache = map.lock().unwrap_or_else(|e| e.into_inner());
                    Arc::clone(cache.entry(coalition).or_default())
                };
                cell.get_or_init(eval).clone()
            }
        }
    }

    /// Number of times the underlying value function has run.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}
