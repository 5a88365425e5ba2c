use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{require_history, Forecaster};
use crate::error::{CometError, Result};
use crate::linalg::l1_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub window_len: usize,
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            window_len: 24,
            k: 8,
        }
    }
}

/// k-nearest-neighbour regression over raw training windows (L1 distance),
/// predicting the mean next-step increment of the neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnRegressor {
    config: KnnConfig,
    windows: Vec<f64>,
    increments: Vec<f64>,
}

impl KnnRegressor {
    /// Stores every window ending at one-based `e` in `window_len ..= n - 1`
    /// together with `x_{e+1} - x_e`.
    pub fn fit(train: &[f64], config: KnnConfig) -> Result<Self> {
        if config.k == 0 || config.window_len == 0 {
            return Err(CometError::InvalidConfig(
                "kNN needs k >= 1 and window_len >= 1".into(),
            ));
        }
        let len = config.window_len;
        if train.len() <= len {
            return Err(CometError::SeriesTooShort(format!(
                "kNN needs more than {len} training values, have {}",
                train.len()
            )));
        }
        let mut windows = Vec::with_capacity((train.len() - len) * len);
        let mut increments = Vec::with_capacity(train.len() - len);
        for e in len..train.len() {
            windows.extend_from_slice(&train[e - len..e]);
            increments.push(train[e] - train[e - 1]);
        }
        Ok(Self {
            config,
            windows,
            increments,
        })
    }

    pub fn config(&self) -> KnnConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn increment(&self, i: usize) -> f64 {
        self.increments[i]
    }

    /// `(index, distance)` of the `k` closest stored windows, ordered by
    /// distance then index.
    pub fn neighbors(&self, query: &[f64]) -> Result<Vec<(usize, f64)>> {
        let len = self.config.window_len;
        if query.len() != len {
            return Err(CometError::DimensionMismatch {
                context: "kNN query window",
                expected: len,
                actual: query.len(),
            });
        }
        if self.is_empty() {
            return Err(CometError::MemoryTooSmall {
                count: 0,
                k: self.config.k,
            });
        }
        let k = self.config.k.min(self.len());
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for (i, w) in self.windows.chunks_exact(len).enumerate() {
            let cand = (i, l1_distance(w, query));
            if best.len() == k && cmp(&cand, &best[k - 1]) != Ordering::Less {
                continue;
            }
            let pos = best.partition_point(|b| cmp(b, &cand) == Ordering::Less);
            best.insert(pos, cand);
            best.truncate(k);
        }
        Ok(best)
    }
}

impl Forecaster for KnnRegressor {
    fn name(&self) -> &str {
        "knn"
    }

    fn min_history(&self) -> usize {
        self.config.window_len
    }

    fn predict_next(&self, history: &[f64]) -> Result<f64> {
        let len = self.config.window_len;
        require_history(history, len)?;
        let hits = self.neighbors(&history[history.len() - len..])?;
        let mean = hits.iter().map(|(i, _)| self.increments[*i]).sum::<f64>() / hits.len() as f64;
        Ok(history[history.len() - 1] + mean)
    }

    fn parameter_bytes(&self) -> usize {
        0
    }

    fn has_parameters(&self) -> bool {
        false
    }
}
