//! One-step Huber training with teacher forcing.
//!
//! The prediction `x_hat = x_t + Σ α_i dx_i` depends on the parameters only
//! through the mixed neighbour weights. Gradients are taken with two
//! simplifications, both standard for retrieval models:
//!
//! * the top-k index set is held fixed (straight-through selection);
//! * stored memory encodings are constants, even though they were produced
//!   by the same encoders. With `memory_rebuild` the store is re-encoded with
//!   the updated encoders at the end of every epoch.
//!
//! During training an anchor never retrieves its own transition (its stored
//! `dx` is the target increment).
//!
//! `W_f` and the behaviour state have no path to the output, so their
//! gradient is identically zero and they are left at their initial values.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoder::encode_multiscale;
use crate::error::{CometError, Result};
use crate::memory::{softmax_weights, topk_excluding, MIX_SOFTMAX, MIX_UNIFORM};
use crate::model::CometModel;
use crate::numfmt::format_sig9;
use crate::rng::SeededRng;
use crate::series::WindowSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub huber_delta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub memory_rebuild: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            huber_delta: 1.0,
            batch_size: 32,
            seed: 0,
            memory_rebuild: true,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CometError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CometError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(CometError::InvalidConfig(format!(
                "huber delta must be positive, got {}",
                self.huber_delta
            )));
        }
        if self.batch_size == 0 {
            return Err(CometError::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub dim: usize,
    pub k: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            dim: crate::encoder::DEFAULT_LATENT_DIM,
            k: crate::memory::DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_val_mae: Vec<Option<f64>>,
    pub best_epoch: usize,
    pub final_validation_mae: Option<f64>,
    pub elapsed: Duration,
}

impl TrainReport {
    /// `epoch,mean_loss,val_mae`; `val_mae` is empty without a validation split.
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,mean_loss,val_mae")?;
        for (i, (loss, val)) in self
            .epoch_losses
            .iter()
            .zip(&self.epoch_val_mae)
            .enumerate()
        {
            let val = val.map(format_sig9).unwrap_or_default();
            writeln!(w, "{},{},{}", i + 1, format_sig9(*loss), val)?;
        }
        Ok(())
    }
}

pub fn huber(prediction: f64, target: f64, delta: f64) -> f64 {
    let e = (prediction - target).abs();
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the prediction.
pub fn huber_grad(prediction: f64, target: f64, delta: f64) -> f64 {
    let e = prediction - target;
    e.clamp(-delta, delta)
}

/// Gradient with respect to every trainable parameter; encoder blocks share
/// the row-major layout of the encoder matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CometGradient {
    pub encoder: [Vec<f64>; 3],
    pub log_w: [f64; 3],
    pub log_gamma: f64,
}

impl CometGradient {
    pub fn zeros_like(model: &CometModel) -> Self {
        Self {
            encoder: model
                .encoder
                .matrices()
                .map(|m| vec![0.0; m.as_slice().len()]),
            log_w: [0.0; 3],
            log_gamma: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &CometGradient, scale: f64) {
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (x, y) in self.log_w.iter_mut().zip(&other.log_w) {
            *x += scale * y;
        }
        self.log_gamma += scale * other.log_gamma;
    }

    /// Flattened as encoder short, medium, long, then `log_w`, then `log_gamma`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.encoder.iter().flatten().copied().collect();
        out.extend_from_slice(&self.log_w);
        out.push(self.log_gamma);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Applies `params -= lr * grad`.
pub fn apply_gradient(model: &mut CometModel, grad: &CometGradient, lr: f64) {
    for (m, g) in model.encoder.matrices_mut().into_iter().zip(&grad.encoder) {
        for (w, d) in m.as_mut_slice().iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
    for (w, d) in model.retrieval.log_w.iter_mut().zip(&grad.log_w) {
        *w -= lr * d;
    }
    model.retrieval.log_gamma -= lr * grad.log_gamma;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGradient {
    pub loss: f64,
    pub prediction: f64,
    pub target: f64,
    pub grad: CometGradient,
}

/// Index of the memory entry built from one-based anchor `t` of the training
/// series, if that entry exists.
pub fn own_memory_index(anchor: usize, series_len: usize, spec: &WindowSpec) -> Option<usize> {
    (anchor > spec.long_len && anchor < series_len).then(|| anchor - spec.long_len - 1)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss and analytic gradient for predicting `x_{anchor+1}` from the ground
/// truth history `series[..anchor]`. `exclude` removes one memory entry from
/// retrieval.
pub fn loss_gradient(
    model: &CometModel,
    anchor: usize,
    series: &[f64],
    delta: f64,
    exclude: Option<usize>,
) -> Result<AnchorGradient> {
    let spec = &model.window_spec;
    if anchor < spec.long_len || anchor >= series.len() {
        return Err(CometError::InsufficientHistory {
            required: spec.long_len.max(anchor + 1),
            available: series.len(),
        });
    }
    let enc = encode_multiscale(series, anchor, &model.encoder, spec)?;
    let hits = topk_excluding(&enc, &model.memory, &model.retrieval, exclude)?;
    let gamma = model.retrieval.gamma();
    let weights = model.retrieval.weights();
    let k = hits.len() as f64;

    let soft = softmax_weights(hits.iter().map(|h| h.distance), gamma);
    let dxs: Vec<f64> = hits
        .iter()
        .map(|h| model.memory.entry(h.entry_index).dx)
        .collect();
    let increment: f64 = soft
        .iter()
        .zip(&dxs)
        .map(|(s, dx)| (MIX_SOFTMAX * s + MIX_UNIFORM / k) * dx)
        .sum();
    let x_t = series[anchor - 1];
    let target = series[anchor];
    let prediction = x_t + increment;
    let loss = huber(prediction, target, delta);
    let dl = huber_grad(prediction, target, delta);

    let mut grad = CometGradient::zeros_like(model);
    let soft_mean: f64 = soft.iter().zip(&dxs).map(|(s, dx)| s * dx).sum();
    let mut dz = [
        vec![0.0; enc.dim()],
        vec![0.0; enc.dim()],
        vec![0.0; enc.dim()],
    ];
    for ((hit, s), dx) in hits.iter().zip(&soft).zip(&dxs) {
        // dL/du_j with u_j = -gamma * d_j
        let du = dl * MIX_SOFTMAX * s * (dx - soft_mean);
        if du == 0.0 {
            continue;
        }
        grad.log_gamma += du * (-gamma * hit.distance);
        let dd = -gamma * du;
        let entry = model.memory.entry(hit.entry_index);
        for (c, (q, m)) in enc.scales().into_iter().zip(entry.scales()).enumerate() {
            let mut l1 = 0.0;
            for (d, (a, b)) in q.iter().zip(m).enumerate() {
                l1 += (a - b).abs();
                dz[c][d] += dd * weights[c] * sign(a - b);
            }
            grad.log_w[c] += dd * weights[c] * l1;
        }
    }
    for (c, len) in spec.lens().into_iter().enumerate() {
        let window = &series[anchor - len..anchor];
        let g = &mut grad.encoder[c];
        for (d, dzd) in dz[c].iter().enumerate() {
            if *dzd == 0.0 {
                continue;
            }
            for (gw, x) in g[d * len..(d + 1) * len].iter_mut().zip(window) {
                *gw += dzd * x;
            }
        }
    }
    Ok(AnchorGradient {
        loss,
        prediction,
        target,
        grad,
    })
}

/// Mean absolute one-step error with ground-truth history, over every anchor
/// `t` in `long_len ..= n - 1`.
pub fn one_step_mae(model: &CometModel, series: &[f64]) -> Result<f64> {
    let long = model.window_spec.long_len;
    if series.len() <= long {
        return Err(CometError::SeriesTooShort(format!(
            "one-step evaluation needs more than {long} values, have {}",
            series.len()
        )));
    }
    let mut total = 0.0;
    for t in long..series.len() {
        let agg = model.predict_increment(&series[..t])?;
        total += (series[t - 1] + agg.dx_mem - series[t]).abs();
    }
    Ok(total / (series.len() - long) as f64)
}

/// Passed to the observer for every supervised anchor.
#[derive(Debug)]
pub struct AnchorEvent<'a> {
    pub epoch: usize,
    pub anchor: usize,
    pub history: &'a [f64],
    pub prediction: f64,
    pub target: f64,
}

pub fn train(
    series: &[f64],
    validation: Option<&[f64]>,
    window_spec: WindowSpec,
    config: &TrainConfig,
    hyper: Hyper,
) -> Result<(CometModel, TrainReport)> {
    train_observed(series, validation, window_spec, config, hyper, &mut |_| {})
}

pub fn train_observed(
    series: &[f64],
    validation: Option<&[f64]>,
    window_spec: WindowSpec,
    config: &TrainConfig,
    hyper: Hyper,
    observer: &mut dyn FnMut(&AnchorEvent<'_>),
) -> Result<(CometModel, TrainReport)> {
    config.validate()?;
    window_spec.validate()?;
    let start = Instant::now();
    let long = window_spec.long_len;
    if series.len() < long + 2 {
        return Err(CometError::SeriesTooShort(format!(
            "training needs at least {} values, have {}",
            long + 2,
            series.len()
        )));
    }
    if series.len() - long - 1 <= hyper.k {
        return Err(CometError::SeriesTooShort(format!(
            "training series of {} values yields {} memory entries; need more than k = {}",
            series.len(),
            series.len() - long - 1,
            hyper.k
        )));
    }
    let mut rng = SeededRng::derived(config.seed, "comet");
    let mut model = CometModel::initialize(series, hyper.dim, hyper.k, window_spec, &mut rng)?;

    let mut anchors: Vec<usize> = (long..series.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_val_mae = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, CometModel)> = None;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut anchors);
        let mut loss_sum = 0.0;
        for batch in anchors.chunks(config.batch_size) {
            let mut acc = CometGradient::zeros_like(&model);
            for &t in batch {
                let exclude = own_memory_index(t, series.len(), &window_spec);
                let g = loss_gradient(&model, t, series, config.huber_delta, exclude)?;
                observer(&AnchorEvent {
                    epoch,
                    anchor: t,
                    history: &series[..t],
                    prediction: g.prediction,
                    target: g.target,
                });
                loss_sum += g.loss;
                acc.add_scaled(&g.grad, 1.0);
            }
            if !acc.is_finite() {
                return Err(CometError::Divergence(format!(
                    "non-finite gradient in epoch {epoch}"
                )));
            }
            apply_gradient(&mut model, &acc, config.learning_rate / batch.len() as f64);
        }
        let mean_loss = loss_sum / anchors.len() as f64;
        if !mean_loss.is_finite() {
            return Err(CometError::Divergence(format!(
                "mean loss became {mean_loss} in epoch {epoch}"
            )));
        }
        if config.memory_rebuild {
            model.rebuild_memory(series)?;
        }
        epoch_losses.push(mean_loss);
        let val = validation.map(|v| one_step_mae(&model, v)).transpose()?;
        epoch_val_mae.push(val);
        if let Some(mae) = val {
            if best.as_ref().is_none_or(|(b, _, _)| mae < *b) {
                best = Some((mae, epoch, model.clone()));
            }
        }
    }

    let (model, best_epoch, final_validation_mae) = match best {
        Some((mae, epoch, m)) => (m, epoch, Some(mae)),
        None => (model, config.epochs, None),
    };
    Ok((
        model,
        TrainReport {
            epoch_losses,
            epoch_val_mae,
            best_epoch,
            final_validation_mae,
            elapsed: start.elapsed(),
        },
    ))
}
