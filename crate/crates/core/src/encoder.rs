//! Fully connected encoder with hand-written forward and backward passes.
//!
//! Hidden layers apply `tanh`; the output layer is linear. A network can
//! instead end in several linear layers (`linear_tail`), which models a
//! linear classification head stacked on an unchanged encoder. Parameters
//! are stored flat, layer by layer (row-major weights, then biases), so the
//! optimizer and the gradient checks can treat the whole network as one
//! vector. Initialization is Xavier-uniform with zero biases and is
//! deterministic per seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn default_linear_tail() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEncoder {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    /// How many trailing layers skip the `tanh`. 1 is a plain encoder; 2
    /// means a linear head sits on top of an otherwise unchanged encoder.
    #[serde(default = "default_linear_tail")]
    linear_tail: usize,
}

/// Post-activation values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// The network output (linear last layer).
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace has at least one layer")
    }

    /// The activation feeding the last layer. For a single-layer network
    /// this is the input itself. Used as the feature vector when the last
    /// layer is a classification head.
    pub fn penultimate(&self) -> &[f64] {
        let n = self.activations.len();
        if n >= 2 {
            &self.activations[n - 2]
        } else {
            &self.input
        }
    }
}

/// Gradients of a scalar loss with respect to all parameters and the input.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn param_len(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpEncoder {
    /// Xavier-uniform initialization: each layer's weights are drawn from
    /// `U(-limit, limit)` with `limit = sqrt(6 / (fan_in + fan_out))`,
    /// biases start at zero.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_linear_tail(layer_dims, 1, seed)
    }

    /// Like [`init`](Self::init), but with the last `linear_tail` layers
    /// linear instead of only the last one.
    pub fn init_with_linear_tail(
        layer_dims: &[usize],
        linear_tail: usize,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "encoder needs at least an input and an output layer".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "encoder layer sizes must be positive".into(),
            ));
        }
        if linear_tail == 0 || linear_tail > layer_dims.len() - 1 {
            return Err(Error::InvalidConfig(format!(
                "linear_tail {} out of range for {} layers",
                linear_tail,
                layer_dims.len() - 1
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_len(layer_dims));
        for w in layer_dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for _ in 0..n_in * n_out {
                params.push(rng.gen_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            params,
            linear_tail,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty dims")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn linear_tail(&self) -> usize {
        self.linear_tail
    }

    /// Whether layer `l` (0-based) applies the `tanh` nonlinearity.
    fn is_tanh_layer(&self, l: usize) -> bool {
        l + self.linear_tail < self.n_layers()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_len(&self.layer_dims[..=layer])
    }

    fn layer_blocks(&self, layer: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let o = self.layer_offset(layer);
        (
            &self.params[o..o + n_in * n_out],
            &self.params[o + n_in * n_out..o + n_in * n_out + n_out],
        )
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let n_layers = self.n_layers();
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (w, b) = self.layer_blocks(l);
            let prev: &[f64] = if l == 0 { x } else { &activations[l - 1] };
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(prev) {
                    acc += wi * xi;
                }
                out.push(if self.is_tanh_layer(l) {
                    acc.tanh()
                } else {
                    acc
                });
            }
            activations.push(out);
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            activations,
        })
    }

    /// Backpropagates `grad_output` (the loss gradient at the network
    /// output) through the trace, returning parameter and input gradients.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &[f64]) -> Result<EncoderGrads> {
        if grad_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: grad_output.len(),
            });
        }
        if trace.activations.len() != self.n_layers() || trace.input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(
                "forward trace does not match this encoder".into(),
            ));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = grad_output.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let o = self.layer_offset(l);
            let (w, _) = self.layer_blocks(l);
            let prev: &[f64] = if l == 0 {
                &trace.input
            } else {
                &trace.activations[l - 1]
            };
            for r in 0..n_out {
                let dr = delta[r];
                let w_grad = &mut grads[o + r * n_in..o + (r + 1) * n_in];
                for (gi, pi) in w_grad.iter_mut().zip(prev) {
                    *gi = dr * pi;
                }
                grads[o + n_in * n_out + r] = dr;
            }
            let mut prev_delta = vec![0.0; n_in];
            for r in 0..n_out {
                let row = &w[r * n_in..(r + 1) * n_in];
                let dr = delta[r];
                for (pd, wi) in prev_delta.iter_mut().zip(row) {
                    *pd += wi * dr;
                }
            }
            if l > 0 && self.is_tanh_layer(l - 1) {
                // prev is the tanh output of layer l-1: tanh' = 1 - a^2.
                for (pd, a) in prev_delta.iter_mut().zip(prev) {
                    *pd *= 1.0 - a * a;
                }
            }
            delta = prev_delta;
        }
        Ok(EncoderGrads {
            params: grads,
            input: delta,
        })
    }

    /// Structural consistency check, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::ShapeMismatch("bad encoder layer dims".into()));
        }
        if self.linear_tail == 0 || self.linear_tail > self.n_layers() {
            return Err(Error::ShapeMismatch(format!(
                "linear_tail {} out of range for {} layers",
                self.linear_tail,
                self.n_layers()
            )));
        }
        if self.params.len() != param_len(&self.layer_dims) {
            return Err(Error::ShapeMismatch(format!(
                "encoder has {} parameters, expected {}",
                self.params.len(),
                param_len(&self.layer_dims)
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ShapeMismatch(
                "encoder contains non-finite parameters".into(),
            ));
        }
        Ok(())
    }
}
