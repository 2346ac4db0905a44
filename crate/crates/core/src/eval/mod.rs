//! Experiment protocols: exact-match evaluation, baselines, head-set
//! generalization, exhaustive subset search, sweeps and comparisons.
//!
//! Evaluation episodes use evaluation-role seeds and extraction uses
//! extraction-role seeds, so the two never overlap.

mod compare;
mod evaluate;
mod pipeline;
mod protocol;
mod sweep;

pub use compare::{compare, mean_accuracy, CompareConfig};
pub use evaluate::{eval_episodes, evaluate, extraction_episodes, Metrics, Summary};
pub use pipeline::{
    alignment_examples, alignment_loss, artifact_from, baseline_fv, baseline_vtv, brute_force_best_subset,
    generalization_eval, hybrid_artifact, mean_activations_for, run_mtv, BestSubset, MtvSetup,
    MAX_BRUTE_FORCE_HEADS, VTV_CALLS, VTV_SHOTS, VTV_STEPS,
};
pub use protocol::{Protocol, ProtocolKind};
pub use sweep::{append_rows, read_rows, sweep, ResultRow, RowKey, SweepGrid, SweepOptions, CSV_HEADER};
