//! The assembled regressor: one-step prediction, autoregressive rollout and
//! footprint accounting.
//!
//! A step encodes the trailing windows, retrieves the `k` nearest stored
//! transitions, averages their increments and advances both the output
//! (`x_next = x_t + dx_mem`) and the internal behaviour state
//! (`z_next = z + dz_mem + W_f [z; z_s; z_m; z_l]`). As written, the output
//! path reads neither the state nor `W_f`; the state is still carried so it
//! can be inspected.

use crate::encoder::{encode_multiscale, BehaviorEncoding, EncoderParams};
use crate::error::{CometError, Result};
use crate::linalg::Matrix;
use crate::memory::{aggregate, build_memory, topk, AggregateResult, MemoryStore, RetrievalParams};
use crate::rng::SeededRng;
use crate::series::WindowSpec;

/// Bias-free `D x 4D` map applied to `[z; z_s; z_m; z_l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionParams {
    pub weights: Matrix,
}

impl CorrectionParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(dim, 4 * dim),
        }
    }

    /// Entries uniform in `[-1/(4D), 1/(4D)]`.
    pub fn init(dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            weights: Matrix::uniform(dim, 4 * dim, 1.0 / (4 * dim) as f64, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorState {
    pub z: Vec<f64>,
}

impl BehaviorState {
    pub fn zeros(dim: usize) -> Self {
        Self { z: vec![0.0; dim] }
    }
}

pub fn correction_term(
    state: &BehaviorState,
    enc: &BehaviorEncoding,
    params: &CorrectionParams,
) -> Result<Vec<f64>> {
    let mut input = Vec::with_capacity(4 * state.z.len());
    input.extend_from_slice(&state.z);
    input.extend_from_slice(&enc.z_short);
    input.extend_from_slice(&enc.z_medium);
    input.extend_from_slice(&enc.z_long);
    params.weights.matvec(&input)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CometModel {
    pub encoder: EncoderParams,
    pub correction: CorrectionParams,
    pub retrieval: RetrievalParams,
    pub memory: MemoryStore,
    pub window_spec: WindowSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub x_next: f64,
    pub state: BehaviorState,
    pub diagnostics: AggregateResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub predictions: Vec<f64>,
    pub per_step_dx: Vec<f64>,
    /// State after each step, kept only when requested.
    pub states: Option<Vec<BehaviorState>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub param_count: usize,
    pub param_bytes: usize,
    pub memory_bytes: usize,
}

impl CometModel {
    pub fn new(
        encoder: EncoderParams,
        correction: CorrectionParams,
        retrieval: RetrievalParams,
        memory: MemoryStore,
        window_spec: WindowSpec,
    ) -> Result<Self> {
        let model = Self {
            encoder,
            correction,
            retrieval,
            memory,
            window_spec,
        };
        model.validate()?;
        Ok(model)
    }

    /// Fresh parameters from `rng` with memory built from `train`.
    pub fn initialize(
        train: &[f64],
        dim: usize,
        k: usize,
        window_spec: WindowSpec,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        window_spec.validate()?;
        if dim == 0 || k == 0 {
            return Err(CometError::InvalidConfig(format!(
                "latent dimension and k must be positive (dim={dim}, k={k})"
            )));
        }
        let encoder = EncoderParams::init(dim, &window_spec, rng);
        let correction = CorrectionParams::init(dim, rng);
        let memory = build_memory(train, &encoder, &window_spec)?;
        Self::new(
            encoder,
            correction,
            RetrievalParams::new(k),
            memory,
            window_spec,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.window_spec.validate()?;
        self.encoder.validate(&self.window_spec)?;
        let d = self.dim();
        let w = &self.correction.weights;
        if w.rows() != d || w.cols() != 4 * d {
            return Err(CometError::DimensionMismatch {
                context: "correction weights",
                expected: 4 * d * d,
                actual: w.rows() * w.cols(),
            });
        }
        if self.memory.dim() != d {
            return Err(CometError::DimensionMismatch {
                context: "memory entry dimension",
                expected: d,
                actual: self.memory.dim(),
            });
        }
        if self.retrieval.k == 0 || self.memory.len() < self.retrieval.k {
            return Err(CometError::MemoryTooSmall {
                count: self.memory.len(),
                k: self.retrieval.k,
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn rebuild_memory(&mut self, train: &[f64]) -> Result<()> {
        self.memory = build_memory(train, &self.encoder, &self.window_spec)?;
        Ok(())
    }

    pub fn encode(&self, history: &[f64]) -> Result<BehaviorEncoding> {
        encode_multiscale(history, history.len(), &self.encoder, &self.window_spec)
    }

    /// Output increment only; the shared core of [`predict_step`] and the
    /// `Forecaster` implementation.
    pub fn predict_increment(&self, history: &[f64]) -> Result<AggregateResult> {
        let enc = self.encode(history)?;
        let hits = topk(&enc, &self.memory, &self.retrieval)?;
        Ok(aggregate(&hits, &self.memory, &self.retrieval))
    }

    pub fn predict_step(&self, history: &[f64], state: &BehaviorState) -> Result<StepOutput> {
        if state.z.len() != self.dim() {
            return Err(CometError::DimensionMismatch {
                context: "behaviour state",
                expected: self.dim(),
                actual: state.z.len(),
            });
        }
        let enc = self.encode(history)?;
        let hits = topk(&enc, &self.memory, &self.retrieval)?;
        let diagnostics = aggregate(&hits, &self.memory, &self.retrieval);
        let learned = correction_term(state, &enc, &self.correction)?;
        let z = state
            .z
            .iter()
            .zip(&diagnostics.dz_mem)
            .zip(&learned)
            .map(|((z, m), l)| z + m + l)
            .collect();
        Ok(StepOutput {
            x_next: history[history.len() - 1] + diagnostics.dx_mem,
            state: BehaviorState { z },
            diagnostics,
        })
    }

    /// Feeds each prediction back as the newest history value. The state
    /// starts at zero.
    pub fn rollout(
        &self,
        seed_history: &[f64],
        horizon: usize,
        trace_state: bool,
    ) -> Result<RolloutResult> {
        let long = self.window_spec.long_len;
        if seed_history.len() < long {
            return Err(CometError::InsufficientHistory {
                required: long,
                available: seed_history.len(),
            });
        }
        if horizon == 0 {
            return Err(CometError::InvalidConfig(
                "rollout horizon must be >= 1".into(),
            ));
        }
        // Only the trailing `long` values are ever read.
        let mut buffer: Vec<f64> = seed_history[seed_history.len() - long..].to_vec();
        let mut state = BehaviorState::zeros(self.dim());
        let mut predictions = Vec::with_capacity(horizon);
        let mut per_step_dx = Vec::with_capacity(horizon);
        let mut states = trace_state.then(|| Vec::with_capacity(horizon));
        for _ in 0..horizon {
            let step = self.predict_step(&buffer, &state)?;
            if !step.x_next.is_finite() {
                return Err(CometError::Divergence(format!(
                    "non-finite prediction after {} rollout steps",
                    predictions.len()
                )));
            }
            predictions.push(step.x_next);
            per_step_dx.push(step.diagnostics.dx_mem);
            state = step.state;
            if let Some(s) = states.as_mut() {
                s.push(state.clone());
            }
            if buffer.len() >= 2 * long {
                buffer.drain(..buffer.len() - long);
            }
            buffer.push(step.x_next);
        }
        Ok(RolloutResult {
            predictions,
            per_step_dx,
            states,
        })
    }

    pub fn parameter_count(&self) -> Footprint {
        footprint(self.dim(), &self.window_spec, self.memory.len())
    }
}

/// Closed-form accounting at single precision: three encoders, `W_f`, the
/// three distance weights and the sharpness, plus `4D + 1` values per stored entry.
pub fn footprint(dim: usize, spec: &WindowSpec, memory_len: usize) -> Footprint {
    let param_count = dim * spec.total_len() + dim * 4 * dim + 4;
    Footprint {
        param_count,
        param_bytes: param_count * 4,
        memory_bytes: memory_len * (4 * dim + 1) * 4,
    }
}
