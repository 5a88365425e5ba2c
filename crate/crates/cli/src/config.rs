//! Flat run configuration. Every key is optional in the file; missing keys
//! keep their built-in defaults and command-line flags override both.

use std::path::Path;

use comet_core::baselines::{KnnConfig, LstmConfig, MlpConfig, SgdConfig};
use comet_core::datagen::GenConfig;
use comet_core::evalkit::{default_drift_horizons, EvalConfig, ModelSpec};
use comet_core::series::{SplitSpec, WindowSpec};
use comet_core::trainer::{Hyper, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub seeds: Vec<u64>,

    pub length: usize,
    pub regime_mean_duration: f64,
    pub drift_min: f64,
    pub drift_max: f64,
    pub volatility_min: f64,
    pub volatility_max: f64,
    pub anchor_min: f64,
    pub anchor_max: f64,
    pub mean_reversion_rate: f64,
    pub cycle_amplitude: f64,
    pub cycle_period: f64,

    pub train_fraction: f64,
    pub validation_fraction: f64,

    pub short_len: usize,
    pub medium_len: usize,
    pub long_len: usize,
    pub dim: usize,
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub huber_delta: f64,
    pub batch_size: usize,
    pub memory_rebuild: bool,

    pub knn_window: usize,
    pub knn_k: usize,
    pub mlp_input: usize,
    pub mlp_hidden: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_seq_len: usize,
    pub baseline_epochs: usize,
    pub baseline_learning_rate: f64,
    pub baseline_batch_size: usize,

    pub horizons: Vec<usize>,
    pub drift_horizons: Vec<usize>,
    pub rollout_horizon: usize,
    pub anchor_stride: usize,
}

impl Default for Config {
    fn default() -> Self {
        let gen = GenConfig::default();
        let split = SplitSpec::default();
        let window = WindowSpec::default();
        let train = TrainConfig::default();
        let hyper = Hyper::default();
        let knn = KnnConfig::default();
        let mlp = MlpConfig::default();
        let lstm = LstmConfig::default();
        let sgd = SgdConfig::default();
        let eval = EvalConfig::default();
        Self {
            seed: 0,
            seeds: eval.seeds,
            length: gen.length,
            regime_mean_duration: gen.regime_mean_duration,
            drift_min: gen.drift_range.0,
            drift_max: gen.drift_range.1,
            volatility_min: gen.volatility_range.0,
            volatility_max: gen.volatility_range.1,
            anchor_min: gen.anchor_range.0,
            anchor_max: gen.anchor_range.1,
            mean_reversion_rate: gen.mean_reversion_rate,
            cycle_amplitude: gen.cycle_amplitude,
            cycle_period: gen.cycle_period,
            train_fraction: split.train_fraction,
            validation_fraction: split.validation_fraction,
            short_len: window.short_len,
            medium_len: window.medium_len,
            long_len: window.long_len,
            dim: hyper.dim,
            k: hyper.k,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            huber_delta: train.huber_delta,
            batch_size: train.batch_size,
            memory_rebuild: train.memory_rebuild,
            knn_window: knn.window_len,
            knn_k: knn.k,
            mlp_input: mlp.input_len,
            mlp_hidden: mlp.hidden,
            lstm_hidden: lstm.hidden_size,
            lstm_seq_len: lstm.seq_len,
            baseline_epochs: sgd.epochs,
            baseline_learning_rate: sgd.learning_rate,
            baseline_batch_size: sgd.batch_size,
            horizons: eval.horizons_short,
            drift_horizons: default_drift_horizons(),
            rollout_horizon: eval.rollout_horizon,
            anchor_stride: eval.anchor_stride,
        }
    }
}

impl Config {
    /// Defaults overlaid with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.to_string().replace('\n', " ");
            CliError::Usage(format!("config file {}: {}", path.display(), msg.trim()))
        })
    }

    pub fn gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            seed,
            length: self.length,
            regime_mean_duration: self.regime_mean_duration,
            drift_range: (self.drift_min, self.drift_max),
            volatility_range: (self.volatility_min, self.volatility_max),
            anchor_range: (self.anchor_min, self.anchor_max),
            mean_reversion_rate: self.mean_reversion_rate,
            cycle_amplitude: self.cycle_amplitude,
            cycle_period: self.cycle_period,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            short_len: self.short_len,
            medium_len: self.medium_len,
            long_len: self.long_len,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            huber_delta: self.huber_delta,
            batch_size: self.batch_size,
            seed,
            memory_rebuild: self.memory_rebuild,
            ..TrainConfig::default()
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            dim: self.dim,
            k: self.k,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            horizons_short: self.horizons.clone(),
            drift_horizons: self.drift_horizons.clone(),
            rollout_horizon: self.rollout_horizon,
            anchor_stride: self.anchor_stride,
            seeds: self.seeds.clone(),
        }
    }

    /// kNN, MLP, LSTM, COMET, in reporting order.
    pub fn model_specs(&self) -> Vec<ModelSpec> {
        let sgd = SgdConfig {
            epochs: self.baseline_epochs,
            learning_rate: self.baseline_learning_rate,
            batch_size: self.baseline_batch_size,
            seed: 0,
        };
        vec![
            ModelSpec::Knn(KnnConfig {
                window_len: self.knn_window,
                k: self.knn_k,
            }),
            ModelSpec::Mlp {
                config: MlpConfig {
                    input_len: self.mlp_input,
                    hidden: self.mlp_hidden.clone(),
                },
                sgd,
            },
            ModelSpec::Lstm {
                config: LstmConfig {
                    hidden_size: self.lstm_hidden,
                    seq_len: self.lstm_seq_len,
                },
                sgd,
            },
            ModelSpec::Comet {
                train: self.train_config(0),
                hyper: self.hyper(),
                window: self.window_spec(),
            },
        ]
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: comet_core::error::Result<()>| r.map_err(CliError::from);
        check(self.gen_config(self.seed).validate())?;
        check(self.split_spec().validate())?;
        check(self.window_spec().validate())?;
        check(self.train_config(self.seed).validate())?;
        check(self.eval_config().validate())?;
        if self.dim == 0 || self.k == 0 {
            return Err(CliError::Usage("dim and k must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("seeds must not be empty".into()));
        }
        Ok(())
    }
}
