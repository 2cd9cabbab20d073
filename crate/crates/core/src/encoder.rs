//! Trainable feature extractor: a small MLP whose output rows are projected
//! onto the unit sphere.
//!
//! Parameters live in one flat vector. Each layer contributes its weight
//! matrix (`out x in`, row-major) followed by its bias. Hidden layers apply the
//! configured activation; the output layer is affine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, Matrix, ParamVector, NORM_FLOOR};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("input width {actual} does not match encoder input_dim {expected}")]
    InputWidth { expected: usize, actual: usize },
    #[error("parameter vector has length {actual}, encoder needs {expected}")]
    ParamLength { expected: usize, actual: usize },
    #[error("upstream gradient shape {actual:?} does not match embeddings {expected:?}")]
    UpstreamShape {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("row {row} has pre-normalization norm {norm:e}, below the floor")]
    DegenerateEmbedding { row: usize, norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `h` and output `a`.
    fn derivative(self, h: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64],
            embed_dim: 32,
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.fan_in * self.fan_out]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_in * self.fan_out;
        &params[start..start + self.fan_out]
    }

    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

/// Shape information for an MLP encoder; parameters are passed separately.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    layers: Vec<Layer>,
    num_params: usize,
}

/// Per-row intermediate values kept for the backward pass.
struct Trace {
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
    /// Layer inputs: `inputs[0]` is the raw row, `inputs[l]` the activation feeding layer `l`.
    inputs: Vec<Vec<f64>>,
    /// Unnormalized output.
    out: Vec<f64>,
    out_norm: f64,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self, EncoderError> {
        if cfg.input_dim == 0 {
            return Err(EncoderError::InvalidConfig("input_dim must be positive".into()));
        }
        if cfg.embed_dim < 2 {
            return Err(EncoderError::InvalidConfig("embed_dim must be at least 2".into()));
        }
        if cfg.hidden_dims.contains(&0) {
            return Err(EncoderError::InvalidConfig("hidden widths must be positive".into()));
        }
        let mut widths = vec![cfg.input_dim];
        widths.extend(&cfg.hidden_dims);
        widths.push(cfg.embed_dim);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            let layer = Layer {
                fan_in: w[0],
                fan_out: w[1],
                offset,
            };
            offset += layer.len();
            layers.push(layer);
        }
        Ok(Self {
            cfg,
            layers,
            num_params: offset,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    /// Glorot-uniform weights and zero biases, seeded from the config.
    pub fn init_params(&self) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut params = vec![0.0; self.num_params];
        for layer in &self.layers {
            let a = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let w = &mut params[layer.offset..layer.offset + layer.fan_in * layer.fan_out];
            for v in w.iter_mut() {
                *v = rng.random_range(-a..a);
            }
        }
        ParamVector(params)
    }

    fn check(&self, x: &Matrix, params: &[f64]) -> Result<(), EncoderError> {
        if x.cols() != self.cfg.input_dim {
            return Err(EncoderError::InputWidth {
                expected: self.cfg.input_dim,
                actual: x.cols(),
            });
        }
        if params.len() != self.num_params {
            return Err(EncoderError::ParamLength {
                expected: self.num_params,
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn forward_row(&self, row: &[f64], params: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = row.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = layer.weights(params);
            let b = layer.bias(params);
            let h: Vec<f64> = (0..layer.fan_out)
                .map(|o| b[o] + dot(&w[o * layer.fan_in..(o + 1) * layer.fan_in], &current))
                .collect();
            let next = if l == last {
                h.clone()
            } else {
                h.iter().map(|&v| self.cfg.activation.apply(v)).collect()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(h);
        }
        let out_norm = dot(&current, &current).sqrt();
        Trace {
            pre,
            inputs,
            out: current,
            out_norm,
        }
    }

    /// Forward pass; every output row has unit l2 norm.
    pub fn encode(&self, x: &Matrix, params: &[f64]) -> Result<Matrix, EncoderError> {
        self.check(x, params)?;
        let d = self.cfg.embed_dim;
        let rows = par::map_range(x.rows(), |i| {
            let t = self.forward_row(x.row(i), params);
            if !(t.out_norm > NORM_FLOOR) {
                return Err(EncoderError::DegenerateEmbedding {
                    row: i,
                    norm: t.out_norm,
                });
            }
            Ok(t.out.iter().map(|v| v / t.out_norm).collect::<Vec<_>>())
        });
        let mut data = Vec::with_capacity(x.rows() * d);
        for r in rows {
            data.extend(r?);
        }
        Ok(Matrix::from_vec(x.rows(), d, data))
    }

    /// Gradient of `sum_ij upstream_ij * encode(x)_ij` with respect to the
    /// parameters.
    pub fn encode_backward(
        &self,
        x: &Matrix,
        params: &[f64],
        upstream: &Matrix,
    ) -> Result<ParamVector, EncoderError> {
        self.check(x, params)?;
        if upstream.rows() != x.rows() || upstream.cols() != self.cfg.embed_dim {
            return Err(EncoderError::UpstreamShape {
                expected: (x.rows(), self.cfg.embed_dim),
                actual: (upstream.rows(), upstream.cols()),
            });
        }
        let per_row = par::map_range(x.rows(), |i| self.backward_row(i, x.row(i), params, upstream.row(i)));
        let mut grad = vec![0.0; self.num_params];
        for g in per_row {
            let g = g?;
            if let Some(g) = g {
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
        }
        Ok(ParamVector(grad))
    }

    fn backward_row(
        &self,
        index: usize,
        row: &[f64],
        params: &[f64],
        upstream: &[f64],
    ) -> Result<Option<Vec<f64>>, EncoderError> {
        let t = self.forward_row(row, params);
        if !(t.out_norm > NORM_FLOOR) {
            return Err(EncoderError::DegenerateEmbedding {
                row: index,
                norm: t.out_norm,
            });
        }
        if upstream.iter().all(|&v| v == 0.0) {
            return Ok(None);
        }
        // Jacobian of h / ||h||: (I - u u^T) / ||h||.
        let u: Vec<f64> = t.out.iter().map(|v| v / t.out_norm).collect();
        let along = dot(upstream, &u);
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&u)
            .map(|(g, ui)| (g - along * ui) / t.out_norm)
            .collect();
        let mut grad = vec![0.0; self.num_params];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &t.inputs[l];
            let w_off = layer.offset;
            let b_off = layer.offset + layer.fan_in * layer.fan_out;
            for o in 0..layer.fan_out {
                let dl = delta[o];
                grad[b_off + o] += dl;
                if dl != 0.0 {
                    let gw = &mut grad[w_off + o * layer.fan_in..w_off + (o + 1) * layer.fan_in];
                    for (g, a) in gw.iter_mut().zip(input) {
                        *g += dl * a;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = layer.weights(params);
            let mut d_input = vec![0.0; layer.fan_in];
            for o in 0..layer.fan_out {
                let dl = delta[o];
                if dl == 0.0 {
                    continue;
                }
                for (di, wv) in d_input.iter_mut().zip(&w[o * layer.fan_in..(o + 1) * layer.fan_in]) {
                    *di += dl * wv;
                }
            }
            let prev_pre = &t.pre[l - 1];
            delta = d_input
                .iter()
                .zip(prev_pre.iter().zip(input))
                .map(|(d, (&h, &a))| d * self.cfg.activation.derivative(h, a))
                .collect();
        }
        Ok(Some(grad))
    }
}
