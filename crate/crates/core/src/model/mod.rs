//! Miniature decoder-only transformer with per-head capture and patching.
//!
//! Pre-LN blocks with fused QKV projection, learned absolute positions and
//! an untied unembedding. A head's output is the `d/H` vector it produces
//! before the layer's output projection mixes heads; that is the point
//! where activations are captured and replaced.

mod config;
pub(crate) mod forward;
mod generate;
pub(crate) mod io;
mod types;
mod weights;

pub use config::{Activation, ModelConfig, PositionalEncoding};
pub use forward::{forward, forward_patched, forward_with, last_logits};
pub use generate::{generate, generate_uncached};
pub use io::{decode_weights, encode_weights, load_weights, save_weights, FORMAT_VERSION, MAGIC};
pub use types::{argmax, Capture, ForwardResult, HeadLocation, ModelInput, PatchScope, PatchSet, SoftSegment};
pub use weights::{LayerWeights, Model, Weights};
