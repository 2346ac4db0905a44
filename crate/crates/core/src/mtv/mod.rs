//! Task vector extraction and application.
//!
//! [`compute_mean_activations`] averages head outputs over many-shot
//! episodes, [`mtv_extract`] picks the heads to carry them and
//! [`apply_mtv`] patches them in for zero-shot queries.

mod apply;
mod artifact;
mod extract;
mod mean;
mod policy;

pub use apply::{apply_mtv, Applied};
pub use artifact::{MtvArtifact, ARTIFACT_VERSION};
pub use extract::{
    mtv_extract, patch_for, patched_loss, AlignmentExample, ExtractionConfig, ExtractionOutput, FinalSelection,
    LossMode, StepTrace,
};
pub use mean::{compute_mean_activations, MeanActivations};
pub use policy::{bernoulli_logprob_grad, BernoulliPolicy, HeadMask};
