//! Replication engine.
//!
//! Replications are independent tasks indexed `0..reps`; results always come
//! back in index order, so any fold over them is deterministic no matter how
//! the work was scheduled. Without the `parallel` feature every engine runs
//! sequentially.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::replication_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Parallel,
    Sequential,
}

impl Default for Engine {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Engine::Parallel
        } else {
            Engine::Sequential
        }
    }
}

impl Engine {
    /// `f(0), ..., f(count - 1)` in index order.
    pub fn map<T, F>(self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Engine::Parallel => {
                use rayon::prelude::*;
                (0..count).into_par_iter().map(f).collect()
            }
            _ => (0..count).map(f).collect(),
        }
    }

    /// Runs `f(index, seed)` for every replication, with
    /// `seed = base_seed ^ index`. Failures are kept in place.
    pub fn replicate<T, F>(self, reps: usize, base_seed: u64, f: F) -> Vec<Result<T>>
    where
        T: Send,
        F: Fn(usize, u64) -> Result<T> + Sync + Send,
    {
        self.map(reps, |i| f(i, replication_seed(base_seed, i)))
    }

    /// As [`Engine::replicate`], stopping at the first failure (lowest index).
    pub fn replicate_all<T, F>(self, reps: usize, base_seed: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, u64) -> Result<T> + Sync + Send,
    {
        self.replicate(reps, base_seed, f)
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                r.map_err(|e| match e {
                    e @ Error::Replication { .. } => e,
                    e => Error::Replication {
                        index,
                        source: Box::new(e),
                    },
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_and_mode_independent() {
        let f = |i: usize, seed: u64| Ok(seed.wrapping_mul(31) + i as u64);
        let a = Engine::Parallel.replicate_all(257, 99, f).unwrap();
        let b = Engine::Sequential.replicate_all(257, 99, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3], (99u64 ^ 3).wrapping_mul(31) + 3);
    }

    #[test]
    fn failure_carries_index() {
        let err = Engine::default()
            .replicate_all(10, 0, |i, _| {
                if i == 7 {
                    Err(Error::Numerical("boom".into()))
                } else {
                    Ok(i)
                }
            })
            .unwrap_err();
        assert!(matches!(err, Error::Replication { index: 7, .. }));
    }
}
