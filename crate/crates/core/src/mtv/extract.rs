use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::artifact::{MtvArtifact, ARTIFACT_VERSION};
use super::mean::MeanActivations;
use super::policy::{bernoulli_logprob_grad, BernoulliPolicy, HeadMask};
use crate::error::{Error, Result};
use crate::model::{forward_with, last_logits, Capture, HeadLocation, Model, ModelInput, PatchScope, PatchSet};
use crate::numerics::{cross_entropy, AdamConfig, Matrix, Scalar};
use crate::rng;
use crate::tasks::{render_episode, Episode, Layout};

/// How the final head set is read off the trained policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalSelection {
    /// Heads with `σ(θ) > 0.5`.
    #[default]
    Threshold,
    /// One Bernoulli draw from the final policy.
    Sample,
}

/// Which gold tokens the reward scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    #[default]
    FirstToken,
    /// Mean cross-entropy over the whole gold response, teacher-forced.
    FullSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    /// Optimization steps. Each step takes the next `batch_examples`
    /// alignment examples, cycling.
    pub steps: usize,
    pub samples_per_step: usize,
    /// Initial inclusion probability for every head.
    pub init_prob: f64,
    /// Half-width of the uniform jitter added to the initial logits.
    pub init_noise: f64,
    /// Subtract the mean reward of the step's samples before weighting.
    pub baseline: bool,
    pub final_selection: FinalSelection,
    pub adam: AdamConfig,
    pub patch_scope: PatchScope,
    pub loss: LossMode,
    /// Alignment examples scored per step (their mean loss is the reward).
    pub batch_examples: usize,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            samples_per_step: 32,
            init_prob: 0.1,
            init_noise: 0.01,
            baseline: true,
            final_selection: FinalSelection::Threshold,
            adam: AdamConfig::policy(),
            patch_scope: PatchScope::EveryStep,
            loss: LossMode::FirstToken,
            batch_examples: 1,
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_examples == 0 {
            return Err(Error::Config("batch_examples must be at least 1".into()));
        }
        if self.samples_per_step == 0 {
            return Err(Error::Config("samples_per_step must be at least 1".into()));
        }
        if !(self.init_prob > 0.0 && self.init_prob < 1.0) {
            return Err(Error::Config(format!("init_prob must be in (0, 1), got {}", self.init_prob)));
        }
        if !(self.init_noise >= 0.0) {
            return Err(Error::Config("init_noise must be non-negative".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("policy learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Short hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A prompt formatted like the downstream task, with its gold response.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentExample {
    pub query: ModelInput,
    pub gold: Vec<u32>,
}

impl AlignmentExample {
    pub fn from_episode(episode: &Episode, layout: &Layout) -> Result<Self> {
        if episode.gold.is_empty() {
            return Err(Error::Task("alignment example has an empty gold response".into()));
        }
        Ok(Self {
            query: render_episode(episode, layout)?,
            gold: episode.gold.clone(),
        })
    }
}

/// Per-step record of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub mean_reward: f64,
    pub grad_norm: f64,
    pub mean_prob: f64,
    pub n_above_half: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionOutput {
    pub artifact: MtvArtifact,
    pub policy: BernoulliPolicy,
    pub trace: Vec<StepTrace>,
}

/// Patch replacing each location in `locations` with its mean activation.
pub fn patch_for<T: Scalar>(
    mean: &MeanActivations<T>,
    locations: &[HeadLocation],
    scope: PatchScope,
) -> Result<PatchSet<T>> {
    let mut p = PatchSet::empty(scope);
    for loc in locations {
        let v = mean
            .get(loc)
            .ok_or_else(|| Error::Shape(format!("no mean activation for ({}, {})", loc.layer, loc.head)))?;
        p.insert(*loc, v.to_vec());
    }
    Ok(p)
}

/// Cross-entropy of the gold response under `patch`.
pub fn patched_loss<T: Scalar>(
    model: &Model<T>,
    example: &AlignmentExample,
    patch: &PatchSet<T>,
    mode: LossMode,
) -> Result<f64> {
    let gold = &example.gold;
    if gold.is_empty() {
        return Err(Error::Task("alignment example has an empty gold response".into()));
    }
    match mode {
        LossMode::FirstToken => {
            let logits = last_logits(model, &example.query, Some(patch))?;
            Ok(cross_entropy(&logits, gold[0] as usize)?.f64())
        }
        LossMode::FullSequence => {
            let n = example.query.len();
            let input = example.query.extended(&gold[..gold.len() - 1]);
            let r = forward_with(model, &input, Some(patch), &Capture::None, n)?;
            let mut total = 0.0;
            for (k, &g) in gold.iter().enumerate() {
                total += cross_entropy(r.logits.row(n - 1 + k), g as usize)?.f64();
            }
            Ok(total / gold.len() as f64)
        }
    }
}

/// Learns which heads should carry the mean activations.
///
/// Each step draws `samples_per_step` masks from the Bernoulli policy,
/// scores each by the negative cross-entropy of the step's alignment
/// examples with the masked heads patched, and takes an Adam ascent step on
/// the score-function gradient estimate.
pub fn mtv_extract<T: Scalar>(
    model: &Model<T>,
    mean: &MeanActivations<T>,
    alignment: &[AlignmentExample],
    cfg: &ExtractionConfig,
) -> Result<ExtractionOutput> {
    cfg.validate()?;
    mean.check_model(model)?;
    if alignment.is_empty() && cfg.steps > 0 {
        return Err(Error::Task("extraction needs at least one alignment example".into()));
    }
    let mc = model.config();
    let mut policy = BernoulliPolicy::init(
        mc.n_layers,
        mc.n_heads,
        cfg.init_prob,
        cfg.init_noise,
        cfg.adam,
        &mut rng::stream(cfg.seed, "mtv-init", 0),
    );
    // The forward pass is deterministic, so repeated (example, mask) pairs
    // are scored once.
    let mut cache: HashMap<(Vec<usize>, HeadMask), f64> = HashMap::new();
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_examples)
            .map(|j| (step * cfg.batch_examples + j) % alignment.len())
            .collect();
        let mut r = rng::stream(cfg.seed, "mtv-step", step as u64);
        let masks: Vec<HeadMask> = (0..cfg.samples_per_step).map(|_| policy.sample(&mut r)).collect();
        let mut rewards = Vec::with_capacity(masks.len());
        for m in &masks {
            let key = (batch.clone(), m.clone());
            let loss = match cache.get(&key) {
                Some(&l) => l,
                None => {
                    let patch = patch_for(mean, &m.locations(), cfg.patch_scope)?;
                    let mut l = 0.0;
                    for &ei in &batch {
                        l += patched_loss(model, &alignment[ei], &patch, cfg.loss)?;
                    }
                    let l = l / batch.len() as f64;
                    if !l.is_finite() {
                        return Err(Error::Diverged { step });
                    }
                    cache.insert(key, l);
                    l
                }
            };
            rewards.push(-loss);
        }
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let b = if cfg.baseline { mean_reward } else { 0.0 };
        let mut grad = Matrix::<f64>::zeros(mc.n_layers, mc.n_heads);
        let scale = 1.0 / masks.len() as f64;
        for (m, &rw) in masks.iter().zip(&rewards) {
            let g = bernoulli_logprob_grad(&policy.theta, m)?;
            for (acc, gi) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc += scale * (rw - b) * gi;
            }
        }
        let grad_norm = grad.as_slice().iter().map(|g| g * g).sum::<f64>().sqrt();
        policy.ascend(&grad).map_err(|_| Error::Diverged { step })?;
        let probs = policy.probs();
        trace.push(StepTrace {
            step: step + 1,
            mean_reward,
            grad_norm,
            mean_prob: probs.as_slice().iter().sum::<f64>() / probs.len() as f64,
            n_above_half: probs.as_slice().iter().filter(|&&p| p > 0.5).count(),
        });
    }

    let chosen = match cfg.final_selection {
        FinalSelection::Threshold => policy.threshold(),
        FinalSelection::Sample => policy.sample(&mut rng::stream(cfg.seed, "mtv-final", 0)),
    };
    let locations = chosen.locations();
    let values = locations
        .iter()
        .map(|l| mean.values[l].iter().map(|x| x.f64() as f32).collect())
        .collect();
    let artifact = MtvArtifact {
        version: ARTIFACT_VERSION,
        task: mean.task.clone(),
        method: "mtv".into(),
        model_fingerprint: mean.model_fingerprint.clone(),
        config_hash: cfg.hash(),
        n_shots: mean.n_shots,
        n_calls: mean.n_calls,
        steps: cfg.steps,
        patch_scope: cfg.patch_scope,
        locations,
        values,
        seeds: BTreeMap::from([("extraction".to_string(), cfg.seed)]),
    };
    Ok(ExtractionOutput { artifact, policy, trace })
}
