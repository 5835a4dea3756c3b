//! Label-free estimation of a model's dataset-level accuracy on unlabeled
//! workloads. A shared evaluator network maps a shift descriptor and a
//! per-model context vector to predicted accuracy; the network is
//! meta-trained over a pool of reference models and adapted to a new model
//! by a few gradient steps on its context alone.

pub mod baselines;
pub mod descriptors;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod meta;
pub mod numerics;
pub mod synth;

pub use error::{Error, Result};
