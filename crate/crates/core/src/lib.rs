//! Multimodal task vectors on a self-hosted miniature transformer.
//!
//! The pipeline has three steps:
//!
//! 1. [`mtv::compute_mean_activations`] averages the final-token output of
//!    every attention head over many N-shot in-context episodes.
//! 2. [`mtv::mtv_extract`] searches for the heads that should carry those
//!    means, using a Bernoulli policy trained with a score-function
//!    gradient on examples formatted like the downstream task.
//! 3. [`mtv::apply_mtv`] patches the selected means into the model and
//!    answers new queries without any in-context examples.
//!
//! [`trainer`] produces an ICL-capable host model with manual backprop,
//! [`tasks`] generates synthetic episodes and [`eval`] runs the
//! experiment protocols.

pub mod error;
pub mod eval;
pub mod model;
pub mod mtv;
pub mod numerics;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{HeadLocation, Model, ModelConfig, ModelInput, PatchScope, PatchSet};
pub use mtv::{ExtractionConfig, MeanActivations, MtvArtifact};
pub use tasks::{Episode, TaskSpec};
