use serde::{Deserialize, Serialize};

use super::{EvalProbe, Mixture, MixtureEntry, TrainConfig};
use crate::model::ModelConfig;
use crate::numerics::{AdamConfig, Precision};
use crate::tasks::TaskSpec;

/// Model shape, task mixture and optimiser settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub model: ModelConfig,
    pub init_seed: u64,
    pub mixture: Mixture,
    pub train: TrainConfig,
}

/// Number of task ids per family in the reference mixture.
pub const FAMILY_SIZE: u32 = 8;

/// The recipe that produced the committed reference checkpoint.
pub fn reference_recipe() -> Recipe {
    let model = ModelConfig::reference();
    let mut entries = Vec::new();
    let per = |w: f64| w / FAMILY_SIZE as f64;
    for id in 0..FAMILY_SIZE {
        entries.push(MixtureEntry {
            task: TaskSpec::bijection(id),
            weight: per(0.5),
            min_shots: None,
            max_shots: 8,
        });
    }
    for id in 0..FAMILY_SIZE {
        entries.push(MixtureEntry {
            task: TaskSpec::lookup(id),
            weight: per(0.3),
            min_shots: None,
            max_shots: 8,
        });
    }
    entries.push(MixtureEntry {
        task: TaskSpec::two_way(0),
        weight: 0.1,
        min_shots: None,
        max_shots: 8,
    });
    for id in 0..FAMILY_SIZE {
        entries.push(MixtureEntry {
            task: TaskSpec::soft_class(id, model.embed_dim),
            weight: per(0.1),
            min_shots: None,
            max_shots: 8,
        });
    }
    Recipe {
        model,
        init_seed: 1,
        mixture: Mixture { entries },
        train: TrainConfig {
            steps: 20_000,
            batch_size: 32,
            lr: 1e-3,
            warmup_steps: 200,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::training()
            },
            grad_clip: Some(1.0),
            eval_every: 500,
            eval: Some(EvalProbe {
                tasks: (0..FAMILY_SIZE).map(TaskSpec::bijection).collect(),
                n_shots: 4,
                n_episodes: 25,
            }),
            seed: 1,
            precision: Precision::F32,
        },
    }
}

/// Zero-shot finetuning on a single task, the upper-bound baseline.
pub fn finetune_config(task: TaskSpec, steps: usize, seed: u64) -> (Mixture, TrainConfig) {
    (
        Mixture::single(task, 0, 0),
        TrainConfig {
            steps,
            batch_size: 32,
            lr: 3e-4,
            warmup_steps: 0,
            adam: AdamConfig::training(),
            grad_clip: Some(1.0),
            eval_every: 0,
            eval: None,
            seed,
            precision: Precision::F32,
        },
    )
}
