//! Numeric substrate: scalar abstraction over `f32`/`f64`, dense matrices,
//! stable elementwise primitives and the Adam optimizer.

mod adam;
mod matrix;
mod ops;
mod scalar;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::{add_matmul_tn, gemm, matmul, matmul_nt, Matrix};
pub use ops::{
    cross_entropy, gelu_tanh, gelu_tanh_grad, layer_norm, layer_norm_in_place, log_softmax, log_sum_exp, logit,
    sigmoid, softmax, softmax_in_place,
};
pub use scalar::Scalar;

use serde::{Deserialize, Serialize};

/// Runtime choice of element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}
