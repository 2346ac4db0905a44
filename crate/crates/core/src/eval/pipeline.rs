use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, extraction_episodes, Metrics};
use super::Protocol;
use crate::error::{Error, Result};
use crate::model::{HeadLocation, Model};
use crate::mtv::{
    compute_mean_activations, mtv_extract, AlignmentExample, ExtractionConfig, ExtractionOutput, HeadMask,
    MeanActivations, MtvArtifact, ARTIFACT_VERSION,
};
use crate::numerics::Scalar;
use crate::tasks::{Episode, Layout, TaskSpec};

/// Steps 1 and 2 for one task: `n_calls` episodes of `n_shots` shots for
/// the means, `extraction.steps` alignment examples with `align_shots`
/// shots (0 = the zero-shot downstream format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtvSetup {
    pub n_shots: usize,
    pub n_calls: usize,
    #[serde(default)]
    pub align_shots: usize,
    #[serde(default)]
    pub extraction: ExtractionConfig,
}

impl MtvSetup {
    pub fn new(n_shots: usize, n_calls: usize, steps: usize) -> Self {
        Self {
            n_shots,
            n_calls,
            align_shots: 0,
            extraction: ExtractionConfig {
                steps,
                ..ExtractionConfig::default()
            },
        }
    }
}

pub fn alignment_examples<T: Scalar>(
    model: &Model<T>,
    task: &TaskSpec,
    n_shots: usize,
    count: usize,
    seed: u64,
    stream: &str,
) -> Result<Vec<AlignmentExample>> {
    let layout = Layout::new(task.delimiters, model.config().max_context);
    extraction_episodes(task, n_shots, count, seed, stream)?
        .iter()
        .map(|e| AlignmentExample::from_episode(e, &layout))
        .collect()
}

pub fn mean_activations_for<T: Scalar>(
    model: &Model<T>,
    task: &TaskSpec,
    n_shots: usize,
    n_calls: usize,
    seed: u64,
) -> Result<MeanActivations<T>> {
    let episodes = extraction_episodes(task, n_shots, n_calls, seed, "mean-acts")?;
    compute_mean_activations(model, task, &episodes)
}

/// Mean activations plus head search, all episodes derived from `seed`.
pub fn run_mtv<T: Scalar>(model: &Model<T>, task: &TaskSpec, setup: &MtvSetup, seed: u64) -> Result<ExtractionOutput> {
    let mean = mean_activations_for(model, task, setup.n_shots, setup.n_calls, seed)?;
    let alignment = alignment_examples(model, task, setup.align_shots, setup.extraction.steps, seed, "alignment")?;
    let cfg = ExtractionConfig {
        seed,
        ..setup.extraction.clone()
    };
    let mut out = mtv_extract(model, &mean, &alignment, &cfg)?;
    out.artifact.seeds.insert("episodes".into(), seed);
    Ok(out)
}

/// Artifact patching `locations` with `mean`, no search involved.
pub fn artifact_from<T: Scalar>(
    mean: &MeanActivations<T>,
    locations: Vec<HeadLocation>,
    method: &str,
    steps: usize,
    base: &ExtractionConfig,
) -> MtvArtifact {
    let values = locations
        .iter()
        .map(|l| mean.values[l].iter().map(|x| x.f64() as f32).collect())
        .collect();
    MtvArtifact {
        version: ARTIFACT_VERSION,
        task: mean.task.clone(),
        method: method.into(),
        model_fingerprint: mean.model_fingerprint.clone(),
        config_hash: base.hash(),
        n_shots: mean.n_shots,
        n_calls: mean.n_calls,
        steps,
        patch_scope: base.patch_scope,
        locations,
        values,
        seeds: BTreeMap::new(),
    }
}

/// Function-vector style baseline: every head of one fixed layer
/// (default `floor(L/2)`), replaced by its mean, without search.
pub fn baseline_fv<T: Scalar>(
    model: &Model<T>,
    mean: &MeanActivations<T>,
    layer: Option<usize>,
    base: &ExtractionConfig,
) -> Result<MtvArtifact> {
    mean.check_model(model)?;
    let cfg = model.config();
    let layer = layer.unwrap_or(cfg.n_layers / 2);
    if layer >= cfg.n_layers {
        return Err(Error::Config(format!("layer {layer} out of range for {} layers", cfg.n_layers)));
    }
    let locations = (0..cfg.n_heads).map(|h| HeadLocation::new(layer, h)).collect();
    Ok(artifact_from(mean, locations, "fv-mode", 0, base))
}

/// Shots per call, calls and search steps of the visual-task-vector style
/// baseline.
pub const VTV_SHOTS: usize = 1;
pub const VTV_CALLS: usize = 10;
pub const VTV_STEPS: usize = 10;

/// Visual-task-vector style baseline: means from 10 one-shot episodes and a
/// 10-step search aligned on the same one-shot format instead of the
/// downstream one. `base` supplies the remaining search settings.
pub fn baseline_vtv<T: Scalar>(
    model: &Model<T>,
    task: &TaskSpec,
    base: &ExtractionConfig,
    seed: u64,
) -> Result<MtvArtifact> {
    let setup = MtvSetup {
        n_shots: VTV_SHOTS,
        n_calls: VTV_CALLS,
        align_shots: VTV_SHOTS,
        extraction: ExtractionConfig {
            steps: VTV_STEPS,
            ..base.clone()
        },
    };
    let mut a = run_mtv(model, task, &setup, seed)?.artifact;
    a.method = "vtv-mode".into();
    Ok(a)
}

/// Keeps `artifact`'s locations and takes values from `mean`, which may
/// come from another task.
pub fn hybrid_artifact<T: Scalar>(artifact: &MtvArtifact, mean: &MeanActivations<T>) -> Result<MtvArtifact> {
    if artifact.model_fingerprint != mean.model_fingerprint {
        return Err(Error::Fingerprint {
            artifact: artifact.model_fingerprint.clone(),
            model: mean.model_fingerprint.clone(),
        });
    }
    let mut a = artifact_from(
        mean,
        artifact.locations.clone(),
        &artifact.method,
        artifact.steps,
        &ExtractionConfig {
            patch_scope: artifact.patch_scope,
            ..ExtractionConfig::default()
        },
    );
    a.config_hash = artifact.config_hash.clone();
    a.seeds = artifact.seeds.clone();
    Ok(a)
}

/// Head locations found on one task, means recomputed on `task_b`,
/// evaluated zero-shot on `task_b`.
pub fn generalization_eval<T: Scalar>(
    model: &Model<T>,
    artifact_a: &MtvArtifact,
    task_b: &TaskSpec,
    mean_b: &MeanActivations<T>,
    episodes_b: &[Episode],
) -> Result<Metrics> {
    artifact_a.check_model(model)?;
    mean_b.check_model(model)?;
    let hybrid = hybrid_artifact(artifact_a, mean_b)?;
    evaluate(model, &Protocol::Mtv(&hybrid), task_b, episodes_b, false)
}

/// Result of exhaustive head-subset search.
#[derive(Debug, Clone, PartialEq)]
pub struct BestSubset {
    pub mask: HeadMask,
    pub loss: f64,
    pub n_evaluated: usize,
}

/// Upper bound on heads for exhaustive search.
pub const MAX_BRUTE_FORCE_HEADS: usize = 16;

/// Mean alignment loss of every one of the `2^(L·H)` masks; returns the
/// smallest (lowest index on ties).
pub fn brute_force_best_subset<T: Scalar>(
    model: &Model<T>,
    mean: &MeanActivations<T>,
    alignment: &[AlignmentExample],
    cfg: &ExtractionConfig,
    max_heads: usize,
) -> Result<BestSubset> {
    mean.check_model(model)?;
    let mc = model.config();
    let n = mc.n_locations();
    if max_heads > MAX_BRUTE_FORCE_HEADS || n > max_heads {
        return Err(Error::Config(format!(
            "exhaustive search over {n} heads exceeds the limit of {}",
            max_heads.min(MAX_BRUTE_FORCE_HEADS)
        )));
    }
    if alignment.is_empty() {
        return Err(Error::Task("exhaustive search needs at least one alignment example".into()));
    }
    let mut best: Option<(HeadMask, f64)> = None;
    for index in 0..1u64 << n {
        let mask = HeadMask::from_index(mc.n_layers, mc.n_heads, index);
        let loss = alignment_loss(model, mean, alignment, &mask, cfg)?;
        if best.as_ref().is_none_or(|(_, b)| loss < *b) {
            best = Some((mask, loss));
        }
    }
    let (mask, loss) = best.expect("at least the empty mask");
    Ok(BestSubset {
        mask,
        loss,
        n_evaluated: 1 << n,
    })
}

/// Mean patched cross-entropy of `mask` over the alignment set.
pub fn alignment_loss<T: Scalar>(
    model: &Model<T>,
    mean: &MeanActivations<T>,
    alignment: &[AlignmentExample],
    mask: &HeadMask,
    cfg: &ExtractionConfig,
) -> Result<f64> {
    let patch = crate::mtv::patch_for(mean, &mask.locations(), cfg.patch_scope)?;
    let mut total = 0.0;
    for ex in alignment {
        total += crate::mtv::patched_loss(model, ex, &patch, cfg.loss)?;
    }
    Ok(total / alignment.len() as f64)
}
