use serde::{Deserialize, Serialize};

use super::DeltaNet;
use crate::error::{CometError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_len: usize,
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            input_len: 24,
            hidden: vec![64, 64],
        }
    }
}

/// Fully connected network with rectifier hidden layers and a linear scalar
/// output. Parameters are one flat vector: for each layer, the row-major
/// `out x in` weights followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    pub fn param_count_for(config: &MlpConfig) -> usize {
        let sizes = layer_sizes(config);
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// PyTorch-style init: weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(config: &MlpConfig, rng: &mut SeededRng) -> Result<Self> {
        if config.input_len == 0 || config.hidden.contains(&0) {
            return Err(CometError::InvalidConfig(
                "MLP layer sizes must be positive".into(),
            ));
        }
        let sizes = layer_sizes(config);
        let mut params = Vec::with_capacity(Self::param_count_for(config));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.uniform_in(-bound, bound));
            }
        }
        Ok(Self { sizes, params })
    }

    pub fn zeros(config: &MlpConfig) -> Self {
        Self {
            sizes: layer_sizes(config),
            params: vec![0.0; Self::param_count_for(config)],
        }
    }

    pub fn from_params(config: &MlpConfig, params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count_for(config);
        if params.len() != expected {
            return Err(CometError::DimensionMismatch {
                context: "MLP parameters",
                expected,
                actual: params.len(),
            });
        }
        Ok(Self {
            sizes: layer_sizes(config),
            params,
        })
    }

    /// Activations of every layer; the last holds the scalar output.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let prev = &acts[l];
            let mut out: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(prev).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        acts
    }
}

fn layer_sizes(config: &MlpConfig) -> Vec<usize> {
    let mut sizes = vec![config.input_len];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(1);
    sizes
}

impl DeltaNet for Mlp {
    fn input_len(&self) -> usize {
        self.sizes[0]
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, input: &[f64]) -> f64 {
        self.activations(input).last().expect("output layer")[0]
    }

    fn loss_gradient(&self, input: &[f64], target: f64, grad: &mut [f64]) -> f64 {
        let acts = self.activations(input);
        let y = acts[acts.len() - 1][0];
        let err = y - target;
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        // delta w.r.t. the pre-activation of the current layer
        let mut delta = vec![2.0 * err];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(prev) {
                    *g += d * x;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                for (n, wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *n += d * wv;
                }
            }
            // rectifier derivative; the post-activation is zero exactly when inactive
            for (n, a) in next.iter_mut().zip(prev) {
                if *a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
        err * err
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        assert_eq!(Mlp::param_count_for(&MlpConfig::default()), 5825);
        let tiny = MlpConfig {
            input_len: 2,
            hidden: vec![3, 3],
        };
        assert_eq!(Mlp::param_count_for(&tiny), 25);
    }

    #[test]
    fn zero_weights_output_bias() {
        let cfg = MlpConfig {
            input_len: 3,
            hidden: vec![4],
        };
        let mut params = vec![0.0; Mlp::param_count_for(&cfg)];
        let last = params.len() - 1;
        params[last] = 0.75;
        let mlp = Mlp::from_params(&cfg, params).unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0, 3.0]), 0.75);
        assert_eq!(Mlp::zeros(&cfg).forward(&[5.0, 5.0, 5.0]), 0.0);
    }

    #[test]
    fn hand_computed_forward() {
        // 2 -> 2 -> 1: h = relu([1 -1; 2 0.5] x + [0, -1]), y = [1 2] h + 0.5
        let cfg = MlpConfig {
            input_len: 2,
            hidden: vec![2],
        };
        let params = vec![1.0, -1.0, 2.0, 0.5, 0.0, -1.0, 1.0, 2.0, 0.5];
        let mlp = Mlp::from_params(&cfg, params).unwrap();
        // x = (1, 3): pre = (-2, 2.5) -> h = (0, 2.5) -> y = 5.5
        assert_eq!(mlp.forward(&[1.0, 3.0]), 5.5);
    }
}
