//! Seeded regime-switching generator for non-stationary, trading-like series.
//!
//! Starting from `x_0 = 1`, each step applies
//!
//! ```text
//! x_{t+1} = x_t + drift_r + rate * (anchor_r - x_t)
//!         + A sin(2πt/P) - A sin(2π(t-1)/P) + σ_r ε_t
//! ```
//!
//! where `(drift_r, σ_r, anchor_r)` are redrawn uniformly from their ranges at
//! each regime switch and regime lengths are geometric with the configured
//! mean. Per regime the draw order is duration, drift, volatility, anchor;
//! one normal is drawn per step after that.

use serde::{Deserialize, Serialize};

use crate::error::{CometError, Result};
use crate::rng::SeededRng;
use crate::series::{TimeSeries, WindowSpec};

pub const INITIAL_VALUE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub length: usize,
    pub regime_mean_duration: f64,
    pub drift_range: (f64, f64),
    pub volatility_range: (f64, f64),
    pub anchor_range: (f64, f64),
    pub mean_reversion_rate: f64,
    pub cycle_amplitude: f64,
    pub cycle_period: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            length: 5000,
            regime_mean_duration: 400.0,
            drift_range: (-0.002, 0.002),
            volatility_range: (0.005, 0.02),
            anchor_range: (0.8, 1.2),
            mean_reversion_rate: 0.05,
            cycle_amplitude: 0.01,
            cycle_period: 150.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let min_len = 2 * (WindowSpec::default().long_len + 2);
        let mut problems = Vec::new();
        if self.length < min_len {
            problems.push(format!("length {} < {min_len}", self.length));
        }
        for (name, (lo, hi)) in [
            ("drift_range", self.drift_range),
            ("volatility_range", self.volatility_range),
            ("anchor_range", self.anchor_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                problems.push(format!(
                    "{name} ({lo}, {hi}) is not an ordered finite interval"
                ));
            }
        }
        if self.volatility_range.0 < 0.0 {
            problems.push("volatility must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.mean_reversion_rate) {
            problems.push(format!(
                "mean_reversion_rate {} outside [0, 1)",
                self.mean_reversion_rate
            ));
        }
        if !(self.regime_mean_duration >= 1.0 && self.regime_mean_duration.is_finite()) {
            problems.push("regime_mean_duration must be >= 1".into());
        }
        if !(self.cycle_period > 0.0 && self.cycle_period.is_finite()) {
            problems.push("cycle_period must be positive".into());
        }
        if !(self.cycle_amplitude >= 0.0 && self.cycle_amplitude.is_finite()) {
            problems.push("cycle_amplitude must be non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CometError::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    /// First step index governed by this regime.
    pub start: usize,
    pub drift: f64,
    pub volatility: f64,
    pub anchor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub series: TimeSeries,
    pub regimes: Vec<Regime>,
}

pub fn generate(config: &GenConfig) -> Result<TimeSeries> {
    Ok(generate_detailed(config)?.series)
}

pub fn generate_detailed(config: &GenConfig) -> Result<Generated> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let two_pi = 2.0 * std::f64::consts::PI;
    let cycle = |t: f64| config.cycle_amplitude * (two_pi * t / config.cycle_period).sin();

    let mut values = Vec::with_capacity(config.length);
    let mut regimes = Vec::new();
    let mut x = INITIAL_VALUE;
    values.push(x);
    let mut remaining = 0usize;
    let mut regime = Regime {
        start: 0,
        drift: 0.0,
        volatility: 0.0,
        anchor: INITIAL_VALUE,
    };
    for t in 0..config.length - 1 {
        if remaining == 0 {
            remaining = rng.geometric(config.regime_mean_duration);
            regime = Regime {
                start: t,
                drift: rng.uniform_in(config.drift_range.0, config.drift_range.1),
                volatility: rng.uniform_in(config.volatility_range.0, config.volatility_range.1),
                anchor: rng.uniform_in(config.anchor_range.0, config.anchor_range.1),
            };
            regimes.push(regime);
        }
        remaining -= 1;
        let tf = t as f64;
        let eps = rng.standard_normal();
        x = x + regime.drift + config.mean_reversion_rate * (regime.anchor - x) + cycle(tf)
            - cycle(tf - 1.0)
            + regime.volatility * eps;
        if !x.is_finite() {
            return Err(CometError::Divergence(format!(
                "generator produced a non-finite value at t = {}",
                t + 1
            )));
        }
        values.push(x);
    }
    Ok(Generated {
        series: TimeSeries::new(values)?,
        regimes,
    })
}
