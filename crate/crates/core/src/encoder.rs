//! Bias-free linear encoders mapping the short, medium and long trailing
//! windows of raw values into a shared D-dimensional behaviour space.

use crate::error::{CometError, Result};
use crate::linalg::Matrix;
use crate::rng::SeededRng;
use crate::series::{window, WindowSpec};

pub const DEFAULT_LATENT_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub short: Matrix,
    pub medium: Matrix,
    pub long: Matrix,
}

/// The three encodings of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorEncoding {
    pub z_short: Vec<f64>,
    pub z_medium: Vec<f64>,
    pub z_long: Vec<f64>,
}

impl BehaviorEncoding {
    pub fn zeros(dim: usize) -> Self {
        Self {
            z_short: vec![0.0; dim],
            z_medium: vec![0.0; dim],
            z_long: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.z_short.len()
    }

    pub fn scales(&self) -> [&[f64]; 3] {
        [&self.z_short, &self.z_medium, &self.z_long]
    }
}

impl EncoderParams {
    /// Each weight drawn uniform in `[-1/L, 1/L]` for an encoder with L columns.
    pub fn init(latent_dim: usize, spec: &WindowSpec, rng: &mut SeededRng) -> Self {
        let [s, m, l] = spec.lens();
        Self {
            short: Matrix::uniform(latent_dim, s, 1.0 / s as f64, rng),
            medium: Matrix::uniform(latent_dim, m, 1.0 / m as f64, rng),
            long: Matrix::uniform(latent_dim, l, 1.0 / l as f64, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.short.rows()
    }

    pub fn matrices(&self) -> [&Matrix; 3] {
        [&self.short, &self.medium, &self.long]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.short, &mut self.medium, &mut self.long]
    }

    pub fn validate(&self, spec: &WindowSpec) -> Result<()> {
        let d = self.latent_dim();
        for (m, len) in self.matrices().into_iter().zip(spec.lens()) {
            if m.rows() != d {
                return Err(CometError::DimensionMismatch {
                    context: "encoder latent dimension",
                    expected: d,
                    actual: m.rows(),
                });
            }
            if m.cols() != len {
                return Err(CometError::DimensionMismatch {
                    context: "encoder window length",
                    expected: len,
                    actual: m.cols(),
                });
            }
            if !m.is_finite() {
                return Err(CometError::InvalidConfig(
                    "non-finite encoder weight".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.matrices().iter().map(|m| m.rows() * m.cols()).sum()
    }
}

/// `out[d] = Σ_j weights[d][j] · window[j]`.
pub fn encode(window: &[f64], weights: &Matrix) -> Result<Vec<f64>> {
    weights.matvec(window)
}

/// Encodes the three trailing windows ending at one-based position `end`.
pub fn encode_multiscale(
    values: &[f64],
    end: usize,
    params: &EncoderParams,
    spec: &WindowSpec,
) -> Result<BehaviorEncoding> {
    if end < spec.long_len || end > values.len() {
        return Err(CometError::InsufficientHistory {
            required: spec.long_len.max(end),
            available: values.len().min(end),
        });
    }
    Ok(BehaviorEncoding {
        z_short: encode(window(values, end, spec.short_len)?, &params.short)?,
        z_medium: encode(window(values, end, spec.medium_len)?, &params.medium)?,
        z_long: encode(window(values, end, spec.long_len)?, &params.long)?,
    })
}
