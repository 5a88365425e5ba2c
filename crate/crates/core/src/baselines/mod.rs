//! Reference one-step regressors and the interface every evaluated model
//! implements. All baselines predict the increment over the last observed
//! value, like the memory-anchored model does.

mod knn;
mod lstm;
mod mlp;

pub use knn::{KnnConfig, KnnRegressor};
pub use lstm::{Lstm, LstmConfig};
pub use mlp::{Mlp, MlpConfig};

use serde::{Deserialize, Serialize};

use crate::error::{CometError, Result};
use crate::model::CometModel;
use crate::rng::SeededRng;

/// A fitted one-step forecaster usable by the rollout driver.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    /// Shortest history `predict_next` accepts.
    fn min_history(&self) -> usize;

    fn predict_next(&self, history: &[f64]) -> Result<f64>;

    /// Trainable scalars times four.
    fn parameter_bytes(&self) -> usize;

    /// `false` for purely memory-based models, which footprint tables show as `--`.
    fn has_parameters(&self) -> bool {
        true
    }

    /// Stored-example bytes, where the model reports them.
    fn memory_bytes(&self) -> Option<usize> {
        None
    }
}

pub(crate) fn require_history(history: &[f64], len: usize) -> Result<()> {
    if history.len() < len {
        return Err(CometError::InsufficientHistory {
            required: len,
            available: history.len(),
        });
    }
    Ok(())
}

impl Forecaster for CometModel {
    fn name(&self) -> &str {
        "comet"
    }

    fn min_history(&self) -> usize {
        self.window_spec.long_len
    }

    fn predict_next(&self, history: &[f64]) -> Result<f64> {
        let agg = self.predict_increment(history)?;
        Ok(history[history.len() - 1] + agg.dx_mem)
    }

    fn parameter_bytes(&self) -> usize {
        self.parameter_count().param_bytes
    }

    fn memory_bytes(&self) -> Option<usize> {
        Some(self.parameter_count().memory_bytes)
    }
}

/// Mini-batch gradient descent settings shared by the neural baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CometError::InvalidConfig(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CometError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A network mapping a fixed-length window of raw values to a next-step increment.
pub trait DeltaNet {
    fn input_len(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward(&self, input: &[f64]) -> f64;
    /// Adds the gradient of `(forward(input) - target)^2` to `grad` and returns the loss.
    fn loss_gradient(&self, input: &[f64], target: f64, grad: &mut [f64]) -> f64;
}

/// Trains `net` on every window of `series` with MSE on the next increment.
/// Returns the mean loss of each epoch.
pub fn fit_delta_net<N: DeltaNet>(
    net: &mut N,
    series: &[f64],
    sgd: &SgdConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    sgd.validate()?;
    let len = net.input_len();
    if series.len() <= len {
        return Err(CometError::SeriesTooShort(format!(
            "need more than {len} training values, have {}",
            series.len()
        )));
    }
    let mut ends: Vec<usize> = (len..series.len()).collect();
    let mut grad = vec![0.0; net.params().len()];
    let mut losses = Vec::with_capacity(sgd.epochs);
    for epoch in 1..=sgd.epochs {
        rng.shuffle(&mut ends);
        let mut total = 0.0;
        for batch in ends.chunks(sgd.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &e in batch {
                let target = series[e] - series[e - 1];
                total += net.loss_gradient(&series[e - len..e], target, &mut grad);
            }
            let step = sgd.learning_rate / batch.len() as f64;
            for (p, g) in net.params_mut().iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let mean = total / ends.len() as f64;
        if !mean.is_finite() || !net.params().iter().all(|p| p.is_finite()) {
            return Err(CometError::Divergence(format!(
                "baseline training diverged in epoch {epoch}"
            )));
        }
        losses.push(mean);
    }
    Ok(losses)
}

/// Forecaster wrapper around a trained [`DeltaNet`].
#[derive(Debug, Clone)]
pub struct NetForecaster<N> {
    pub name: String,
    pub net: N,
}

impl<N: DeltaNet + Send + Sync> Forecaster for NetForecaster<N> {
    fn name(&self) -> &str {
        &self.name
    }

    fn min_history(&self) -> usize {
        self.net.input_len()
    }

    fn predict_next(&self, history: &[f64]) -> Result<f64> {
        let len = self.net.input_len();
        require_history(history, len)?;
        let last = history[history.len() - 1];
        Ok(last + self.net.forward(&history[history.len() - len..]))
    }

    fn parameter_bytes(&self) -> usize {
        self.net.params().len() * 4
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
