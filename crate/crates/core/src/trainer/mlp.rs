//! Fully connected network with tanh hidden layers and an independent
//! logistic output per class.
//!
//! Parameters live in one flat vector, layer by layer: the `out × in`
//! weight matrix (row-major) followed by the `out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::knowledge::ProbVector;
use crate::{Error, Result};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Persisted layout: `{"format_version": 1, "layer_sizes": [...], "params": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerShape {
    pub n_in: usize,
    pub n_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_in * self.n_out
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let w = self.offset + self.n_in * self.n_out;
        w..w + self.n_out
    }
}

fn check_shapes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(
            "need at least input and output layer sizes".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "zero-width layer in {layer_sizes:?}"
        )));
    }
    Ok(())
}

pub(crate) fn layer_shapes(layer_sizes: &[usize]) -> Vec<LayerShape> {
    let mut offset = 0;
    layer_sizes
        .windows(2)
        .map(|w| {
            let s = LayerShape {
                n_in: w[0],
                n_out: w[1],
                offset,
            };
            offset += w[0] * w[1] + w[1];
            s
        })
        .collect()
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Uniform Glorot initialisation: each weight is drawn from
/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`; biases are zero.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    check_shapes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; param_count(layer_sizes)];
    for shape in layer_shapes(layer_sizes) {
        let bound = (6.0 / (shape.n_in + shape.n_out) as f64).sqrt();
        for w in &mut params[shape.weights()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(MlpParams {
        format_version: PARAMS_FORMAT_VERSION,
        layer_sizes: layer_sizes.to_vec(),
        params,
    })
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_shapes(layer_sizes)?;
        Ok(Self {
            format_version: PARAMS_FORMAT_VERSION,
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; param_count(layer_sizes)],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub(crate) fn shapes(&self) -> Vec<LayerShape> {
        layer_shapes(&self.layer_sizes)
    }

    /// Checks the shape header against the payload and that every entry is
    /// finite.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported parameter format version {}",
                self.format_version
            )));
        }
        check_shapes(&self.layer_sizes)?;
        let expected = param_count(&self.layer_sizes);
        if self.params.len() != expected {
            return Err(Error::Dimension {
                expected,
                found: self.params.len(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// Output logits and the post-activation values of every layer
    /// (input first, logits last).
    pub(crate) fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let shapes = self.shapes();
        let mut acts = Vec::with_capacity(shapes.len() + 1);
        acts.push(x.to_vec());
        for (l, s) in shapes.iter().enumerate() {
            let input = &acts[l];
            let w = &self.params[s.weights()];
            let b = &self.params[s.bias()];
            let mut out: Vec<f64> = (0..s.n_out)
                .map(|o| {
                    let row = &w[o * s.n_in..(o + 1) * s.n_in];
                    b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if l + 1 < shapes.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates `d(loss)/d(params)` into `grad`, given the trace from
    /// [`forward_trace`](Self::forward_trace) and `d(loss)/d(logits)`.
    pub(crate) fn backward(&self, acts: &[Vec<f64>], d_logits: &[f64], grad: &mut [f64]) {
        let shapes = self.shapes();
        let mut delta = d_logits.to_vec();
        for l in (0..shapes.len()).rev() {
            let s = shapes[l];
            let input = &acts[l];
            {
                let gw = &mut grad[s.weights()];
                for o in 0..s.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * s.n_in..(o + 1) * s.n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            for (g, d) in grad[s.bias()].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[s.weights()];
            let mut prev = vec![0.0; s.n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &w[o * s.n_in..(o + 1) * s.n_in];
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += d * wv;
                }
            }
            // tanh'(u) = 1 - tanh(u)^2, and acts[l] holds tanh(u).
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(self.forward_trace(x).pop().unwrap())
    }
}

/// Per-class probabilities `σ(logit_j)` for one input.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<ProbVector> {
    let z = params.logits(x)?;
    Ok(ProbVector::new(
        &z.iter().map(|&v| logistic(v)).collect::<Vec<_>>(),
    ))
}

pub fn forward_batch(params: &MlpParams, xs: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
    xs.iter().map(|x| forward(params, x)).collect()
}
