use serde::{Deserialize, Serialize};

use super::{sigmoid, DeltaNet};
use crate::error::{CometError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden_size: usize,
    pub seq_len: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            seq_len: 60,
        }
    }
}

/// Single-layer LSTM over scalar inputs with a linear readout of the final
/// hidden state.
///
/// Gate blocks are ordered input, forget, cell, output. Flat parameter
/// layout: `w_x[4H]`, `w_h[4H x H]` row-major, `b[4H]`, `v[H]`, `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    hidden: usize,
    seq_len: usize,
    params: Vec<f64>,
}

struct Offsets {
    wx: usize,
    wh: usize,
    b: usize,
    v: usize,
    c: usize,
}

struct Trace {
    /// gate activations per step, `[i | f | g | o]`
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn param_count_for(config: &LstmConfig) -> usize {
        let h = config.hidden_size;
        4 * (h * (1 + h) + h) + h + 1
    }

    /// Uniform in `±1/sqrt(H)` for every parameter.
    pub fn init(config: &LstmConfig, rng: &mut SeededRng) -> Result<Self> {
        Self::check(config)?;
        let bound = 1.0 / (config.hidden_size as f64).sqrt();
        let params = (0..Self::param_count_for(config))
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        Ok(Self {
            hidden: config.hidden_size,
            seq_len: config.seq_len,
            params,
        })
    }

    pub fn from_params(config: &LstmConfig, params: Vec<f64>) -> Result<Self> {
        Self::check(config)?;
        let expected = Self::param_count_for(config);
        if params.len() != expected {
            return Err(CometError::DimensionMismatch {
                context: "LSTM parameters",
                expected,
                actual: params.len(),
            });
        }
        Ok(Self {
            hidden: config.hidden_size,
            seq_len: config.seq_len,
            params,
        })
    }

    fn check(config: &LstmConfig) -> Result<()> {
        if config.hidden_size == 0 || config.seq_len == 0 {
            return Err(CometError::InvalidConfig(
                "LSTM hidden size and sequence length must be positive".into(),
            ));
        }
        Ok(())
    }

    fn offsets(&self) -> Offsets {
        let h = self.hidden;
        let wx = 0;
        let wh = wx + 4 * h;
        let b = wh + 4 * h * h;
        let v = b + 4 * h;
        Offsets {
            wx,
            wh,
            b,
            v,
            c: v + h,
        }
    }

    fn run(&self, input: &[f64]) -> (f64, Trace) {
        let h = self.hidden;
        let off = self.offsets();
        let p = &self.params;
        let mut trace = Trace {
            gates: Vec::with_capacity(input.len()),
            cells: vec![vec![0.0; h]],
            hiddens: vec![vec![0.0; h]],
        };
        let mut pre = vec![0.0; 4 * h];
        for &x in input {
            let h_prev = &trace.hiddens[trace.hiddens.len() - 1];
            for (r, a) in pre.iter_mut().enumerate() {
                let row = &p[off.wh + r * h..off.wh + (r + 1) * h];
                *a = p[off.wx + r] * x
                    + p[off.b + r]
                    + row.iter().zip(h_prev).map(|(w, hv)| w * hv).sum::<f64>();
            }
            let mut gates = vec![0.0; 4 * h];
            for j in 0..h {
                gates[j] = sigmoid(pre[j]);
                gates[h + j] = sigmoid(pre[h + j]);
                gates[2 * h + j] = pre[2 * h + j].tanh();
                gates[3 * h + j] = sigmoid(pre[3 * h + j]);
            }
            let c_prev = &trace.cells[trace.cells.len() - 1];
            let c: Vec<f64> = (0..h)
                .map(|j| gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j])
                .collect();
            let hid: Vec<f64> = (0..h).map(|j| gates[3 * h + j] * c[j].tanh()).collect();
            trace.gates.push(gates);
            trace.cells.push(c);
            trace.hiddens.push(hid);
        }
        let last = &trace.hiddens[trace.hiddens.len() - 1];
        let y = p[off.c]
            + p[off.v..off.v + h]
                .iter()
                .zip(last)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        (y, trace)
    }

    pub fn final_hidden(&self, input: &[f64]) -> Vec<f64> {
        let (_, trace) = self.run(input);
        trace.hiddens[trace.hiddens.len() - 1].clone()
    }
}

impl DeltaNet for Lstm {
    fn input_len(&self) -> usize {
        self.seq_len
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, input: &[f64]) -> f64 {
        self.run(input).0
    }

    fn loss_gradient(&self, input: &[f64], target: f64, grad: &mut [f64]) -> f64 {
        let h = self.hidden;
        let off = self.offsets();
        let (y, trace) = self.run(input);
        let err = y - target;
        let dy = 2.0 * err;
        let steps = input.len();

        let h_last = &trace.hiddens[steps];
        for j in 0..h {
            grad[off.v + j] += dy * h_last[j];
        }
        grad[off.c] += dy;

        let mut dh: Vec<f64> = self.params[off.v..off.v + h]
            .iter()
            .map(|v| dy * v)
            .collect();
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for s in (0..steps).rev() {
            let g = &trace.gates[s];
            let c = &trace.cells[s + 1];
            let c_prev = &trace.cells[s];
            let h_prev = &trace.hiddens[s];
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = c[j].tanh();
                let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
                da[j] = dc * gg * i * (1.0 - i);
                da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = dc * i * (1.0 - gg * gg);
                da[3 * h + j] = dh[j] * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let x = input[s];
            let mut dh_prev = vec![0.0; h];
            for (r, d) in da.iter().enumerate() {
                grad[off.wx + r] += d * x;
                grad[off.b + r] += d;
                let base = off.wh + r * h;
                let row = &self.params[base..base + h];
                for j in 0..h {
                    grad[base + j] += d * h_prev[j];
                    dh_prev[j] += d * row[j];
                }
            }
            dh = dh_prev;
        }
        err * err
    }
}
