//! The evaluator network `g(sd, ctx)`: an MLP over the concatenation of a
//! normalized shift descriptor and a per-model context vector, squashed to
//! `(0, 1)`.

mod net;
mod optim;

pub use net::{
    backward, forward, forward_batch, forward_with_masks, ForwardCache, Gradients, Mode,
};
pub(crate) use net::{backward_selective, Want};
pub use optim::{
    adamw_step, cosine_lr, gd_step, rmse_loss, LrSchedule, OptimizerState, DEFAULT_BETAS,
    DEFAULT_LR, DEFAULT_WEIGHT_DECAY, RMSE_EPSILON,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the descriptor part of the input (`[F, M, SW]`).
pub const SD_DIM: usize = 3;
pub const DEFAULT_CONTEXT_DIM: usize = 512;
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 64];
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// Layer widths of the evaluator. Input is `SD_DIM + ctx_dim`, output is 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub ctx_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            ctx_dim: DEFAULT_CONTEXT_DIM,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl Dims {
    pub fn new(ctx_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        let dims = Self { ctx_dim, hidden };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        SD_DIM + self.ctx_dim
    }

    /// `[input, hidden..., 1]`
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim());
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// (weights offset, bias offset, fan_in, fan_out) for every layer.
    pub(crate) fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.widths()
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    weights: offset,
                    bias: offset + w[0] * w[1],
                    fan_in: w[0],
                    fan_out: w[1],
                };
                offset = l.bias + w[1];
                l
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerLayout {
    pub weights: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// All weights and biases, flattened layer by layer (row-major weights
/// `fan_out × fan_in`, then bias). Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorParams {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl EvaluatorParams {
    pub fn zeros(dims: Dims) -> Self {
        let n = dims.param_count();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.param_count() {
            return Err(Error::DimensionMismatch {
                what: "evaluator parameters",
                expected: dims.param_count(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("evaluator parameters"));
        }
        Ok(Self { dims, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Order-sensitive fingerprint of the exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(&self.data)
    }

    pub(crate) fn weights(&self, l: &LayerLayout) -> &[f64] {
        &self.data[l.weights..l.bias]
    }

    pub(crate) fn bias(&self, l: &LayerLayout) -> &[f64] {
        &self.data[l.bias..l.bias + l.fan_out]
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(seed: u64, dims: &Dims) -> Result<EvaluatorParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EvaluatorParams::zeros(dims.clone());
    for l in dims.layout() {
        let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        for w in &mut params.data[l.weights..l.bias] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Per-model context vector fed alongside the descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub model_id: String,
    pub values: Vec<f64>,
}

impl ContextVector {
    pub fn zeros(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&self.values)
    }
}

/// FNV-style fold over the IEEE bit patterns, one 64-bit word at a time.
pub fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17);
    }
    h ^ values.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims_match_reference_shape() {
        let d = Dims::default();
        assert_eq!(d.widths(), vec![515, 256, 128, 64, 1]);
        assert_eq!(d.param_count(), 173_313);
        assert!(d.param_count() >= 100_000);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let dims = Dims::new(2, vec![8, 4, 2]).unwrap();
        let a = init_params(5, &dims).unwrap();
        let b = init_params(5, &dims).unwrap();
        assert_eq!(a, b);
        for l in dims.layout() {
            assert!(a.bias(&l).iter().all(|&v| v == 0.0));
            let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            assert!(a.weights(&l).iter().all(|w| w.abs() <= bound));
        }
        let c = init_params(6, &dims).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn from_vec_checks_shape() {
        let dims = Dims::new(2, vec![3]).unwrap();
        assert!(EvaluatorParams::from_vec(dims.clone(), vec![0.0; 4]).is_err());
        assert!(EvaluatorParams::from_vec(dims.clone(), vec![0.0; dims.param_count()]).is_ok());
    }
}
